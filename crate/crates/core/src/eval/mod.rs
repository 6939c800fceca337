//! Anti-degradation evaluation.
//!
//! Each benchmark item gets one recipe drawn from `(run seed, item id)`.
//! For every intensity factor `f` the recipe's intensities are scaled to
//! `f * s` (paired design: same types and seed at every factor, so intensity
//! is the only variable), the image is degraded, the model is queried, and
//! its chain is parsed. [`score`] reduces the run to per-factor accuracy,
//! robustness drops relative to the clean slot, degradation-perception
//! statistics, and chain-length distributions.
//!
//! Scoring: MCQ compares the ANSWER segment with the gold answer (or a
//! choice letter naming it). VQA and CAP use a proxy: the gold answer must
//! appear in the conclusion, case-insensitively.

mod client;

pub use client::{
    ClientUnavailable, ModelClient, ModelRequest, RemoteModelClient, ThresholdMockClient,
    ThresholdMockConfig,
};

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{chain_length, parse_chain, ReasoningChain};
use crate::degradation::{apply_recipe, sample_recipe, DegradationRecipe, SamplingConfig};
use crate::error::DegradationError;
use crate::raster::{distortion_score, RasterImage};
use crate::rng::{hash_str, RngState};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("run has no scored responses")]
    EmptyRun,
    #[error(transparent)]
    Degradation(#[from] DegradationError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Task {
    Mcq,
    Vqa,
    Cap,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Mcq => "MCQ",
            Task::Vqa => "VQA",
            Task::Cap => "CAP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkItem {
    pub id: String,
    pub image_path: PathBuf,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub answer: String,
    pub task: Task,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.answer.trim().is_empty() {
            return Err("answer is empty".into());
        }
        if self.task == Task::Mcq {
            let choices = self.choices.as_deref().unwrap_or_default();
            if choices.len() < 2 {
                return Err(format!("MCQ item `{}` needs at least 2 choices", self.id));
            }
            if !choices.iter().any(|c| c.trim() == self.answer.trim()) {
                return Err(format!("MCQ item `{}`: answer is not among the choices", self.id));
            }
        }
        Ok(())
    }
}

pub fn parse_item_line(line: &str) -> Result<BenchmarkItem, String> {
    let item: BenchmarkItem = serde_json::from_str(line).map_err(|e| e.to_string())?;
    item.validate()?;
    Ok(item)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub items: Vec<BenchmarkItem>,
}

impl BenchmarkManifest {
    pub fn new(items: Vec<BenchmarkItem>) -> Result<Self, EvalError> {
        let mut seen = std::collections::HashSet::new();
        for (i, item) in items.iter().enumerate() {
            item.validate()
                .map_err(|message| EvalError::Manifest { line: i + 1, message })?;
            if !seen.insert(item.id.as_str()) {
                return Err(EvalError::Manifest {
                    line: i + 1,
                    message: format!("duplicate id `{}`", item.id),
                });
            }
        }
        Ok(Self { items })
    }

    /// Reads a JSONL manifest; relative image paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut items = Vec::new();
        for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut item = parse_item_line(&line)
                .map_err(|message| EvalError::Manifest { line: i + 1, message })?;
            if item.image_path.is_relative() {
                item.image_path = base.join(&item.image_path);
            }
            items.push(item);
        }
        Self::new(items)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Intensity factors; 0 is the clean slot.
    pub factors: Vec<f64>,
    /// When set, each sampled recipe is rescaled so its intensities sum to this.
    pub normalize_total: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            factors: vec![0.0, 0.25, 0.5, 1.0],
            normalize_total: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub options: EvalOptions,
    pub workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            sampling: SamplingConfig::default(),
            options: EvalOptions::default(),
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    pub factor: f64,
    pub total_intensity: f64,
    /// SHA-256 of the image shown to the model.
    pub image_hash: String,
    /// MSE of the shown image against the clean source.
    pub distortion: f64,
    pub response: Option<String>,
    pub chain: Option<ReasoningChain>,
    pub parse_error: Option<String>,
    pub client_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRun {
    pub id: String,
    pub task: Task,
    pub answer: String,
    pub choices: Option<Vec<String>>,
    pub source_hash: String,
    pub recipe: DegradationRecipe,
    pub slots: Vec<SlotResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub seed: u64,
    pub factors: Vec<f64>,
    /// Sorted by item id; slots follow `factors` order.
    pub items: Vec<ItemRun>,
    pub failures: Vec<ItemFailure>,
}

pub const RESPONSE_FORMAT: &str = "Answer using exactly this structure:\n\
<TYPE>one `degradation_name: intensity` line per degradation you see<TYPE_END>\
<INFLUENCE>how they affect the image<INFLUENCE_END>\
<REASONING>your reasoning about the undegraded content<REASONING_END>\
<CONCLUSION>your conclusion<CONCLUSION_END><ANSWER>final answer<ANSWER_END>";

pub fn build_prompt(item: &BenchmarkItem) -> String {
    let mut prompt = format!("Question: {}\n", item.question.trim());
    if let Some(choices) = &item.choices {
        for (i, c) in choices.iter().enumerate() {
            let letter = (b'A' + (i % 26) as u8) as char;
            let _ = writeln!(prompt, "({letter}) {c}");
        }
    }
    prompt.push_str(RESPONSE_FORMAT);
    prompt
}

/// The recipe an item receives in a run: a pure function of the run seed,
/// the item id and the sampling options.
pub fn item_recipe(
    seed: u64,
    item_id: &str,
    sampling: &SamplingConfig,
    normalize_total: Option<f64>,
) -> Result<DegradationRecipe, DegradationError> {
    let mut rng = RngState::new(hash_str(seed, item_id));
    let recipe = sample_recipe(&mut rng, sampling)?;
    match normalize_total {
        Some(total) => recipe.normalized_to(total),
        None => Ok(recipe),
    }
}

/// The image shown at `factor`: the clean source at 0, otherwise the source
/// degraded by the scaled recipe.
pub fn degraded_at(
    source: &RasterImage,
    recipe: &DegradationRecipe,
    factor: f64,
) -> Result<RasterImage, DegradationError> {
    if factor == 0.0 {
        return Ok(source.clone());
    }
    apply_recipe(source, &recipe.scaled(factor))
}

fn run_item(
    item: &BenchmarkItem,
    client: &dyn ModelClient,
    settings: &EvalSettings,
) -> Result<ItemRun, String> {
    let source = RasterImage::load(&item.image_path).map_err(|e| e.to_string())?;
    let recipe = item_recipe(
        settings.seed,
        &item.id,
        &settings.sampling,
        settings.options.normalize_total,
    )
    .map_err(|e| e.to_string())?;
    let prompt = build_prompt(item);
    let mut slots = Vec::with_capacity(settings.options.factors.len());
    for &factor in &settings.options.factors {
        let applied = recipe.scaled(factor);
        let image = degraded_at(&source, &recipe, factor).map_err(|e| e.to_string())?;
        let distortion = distortion_score(&source, &image).map_err(|e| e.to_string())?;
        let request = ModelRequest {
            item,
            prompt: &prompt,
            image: &image,
            applied: &applied,
        };
        let mut slot = SlotResult {
            factor,
            total_intensity: applied.total_intensity(),
            image_hash: image.content_hash(),
            distortion,
            response: None,
            chain: None,
            parse_error: None,
            client_error: None,
        };
        match client.answer(&request) {
            Ok(text) => {
                match parse_chain(&text) {
                    Ok(chain) => slot.chain = Some(chain),
                    Err(e) => slot.parse_error = Some(e.to_string()),
                }
                slot.response = Some(text);
            }
            Err(e) => slot.client_error = Some(e.to_string()),
        }
        slots.push(slot);
    }
    Ok(ItemRun {
        id: item.id.clone(),
        task: item.task,
        answer: item.answer.clone(),
        choices: item.choices.clone(),
        source_hash: source.content_hash(),
        recipe,
        slots,
    })
}

pub fn run_eval(
    manifest: &BenchmarkManifest,
    client: &dyn ModelClient,
    settings: &EvalSettings,
) -> Result<EvalRun, EvalError> {
    settings.sampling.validate()?;
    let factors = &settings.options.factors;
    if factors.is_empty() || factors.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(EvalError::Config("factors must be non-empty and lie in [0, 1]".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.max(1))
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let results: Vec<(String, Result<ItemRun, String>)> = pool.install(|| {
        manifest
            .items
            .par_iter()
            .map(|item| (item.id.clone(), run_item(item, client, settings)))
            .collect()
    });
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(run) => items.push(run),
            Err(error) => failures.push(ItemFailure { id, error }),
        }
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    failures.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(EvalRun {
        seed: settings.seed,
        factors: factors.clone(),
        items,
        failures,
    })
}

fn normalize_answer(s: &str) -> String {
    s.trim()
        .trim_end_matches('.')
        .trim()
        .to_lowercase()
}

/// Whether a parsed chain answers the item correctly.
pub fn is_correct(task: Task, gold: &str, choices: Option<&[String]>, chain: &ReasoningChain) -> bool {
    let gold_n = normalize_answer(gold);
    match task {
        Task::Mcq => {
            let Some(given) = chain.answer.as_deref() else {
                return false;
            };
            let given_n = normalize_answer(given);
            if given_n == gold_n {
                return true;
            }
            // A bare choice letter, optionally in parentheses.
            let letter = given_n.trim_matches(|c| c == '(' || c == ')');
            if letter.len() == 1 {
                let idx = (letter.as_bytes()[0] as char).to_ascii_uppercase() as usize;
                if let (Some(choices), Some(i)) = (choices, idx.checked_sub('A' as usize)) {
                    return choices.get(i).is_some_and(|c| normalize_answer(c) == gold_n);
                }
            }
            false
        }
        Task::Vqa | Task::Cap => chain.conclusion.to_lowercase().contains(&gold_n),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<usize>,
    pub max: Option<usize>,
}

impl LengthStats {
    fn from(mut lens: Vec<usize>) -> Self {
        lens.sort_unstable();
        let n = lens.len();
        let median = match n {
            0 => None,
            n if n % 2 == 1 => Some(lens[n / 2] as f64),
            n => Some((lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0),
        };
        Self {
            count: n,
            mean: (n > 0).then(|| lens.iter().sum::<usize>() as f64 / n as f64),
            median,
            min: lens.first().copied(),
            max: lens.last().copied(),
        }
    }
}

/// Accuracy and perception statistics for one (task, factor) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    /// `None` for the all-tasks row.
    pub task: Option<Task>,
    pub factor: f64,
    /// Slots with a client response (client failures are excluded).
    pub scored: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    /// acc(clean) - acc(factor); `None` without a clean (factor 0) slot.
    pub delta: Option<f64>,
    pub client_failures: usize,
    pub parse_failures: usize,
    pub parse_failure_rate: Option<f64>,
    /// Share of predicted types absent from the applied recipe.
    pub type_misclassification_rate: Option<f64>,
    /// Mean |predicted - applied| intensity over predicted types present in the recipe.
    pub intensity_mae: Option<f64>,
    pub chain_length: LengthStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub design: String,
    pub scoring: String,
    pub factors: Vec<f64>,
    pub items: usize,
    pub item_failures: Vec<ItemFailure>,
    /// Per factor, all tasks pooled.
    pub overall: Vec<CellStats>,
    /// Per task and factor.
    pub by_task: Vec<CellStats>,
}

fn cell(run: &EvalRun, task: Option<Task>, factor_idx: usize) -> CellStats {
    let factor = run.factors[factor_idx];
    let mut c = CellStats {
        task,
        factor,
        scored: 0,
        correct: 0,
        accuracy: None,
        delta: None,
        client_failures: 0,
        parse_failures: 0,
        parse_failure_rate: None,
        type_misclassification_rate: None,
        intensity_mae: None,
        chain_length: LengthStats::from(vec![]),
    };
    let mut predicted = 0usize;
    let mut misclassified = 0usize;
    let mut abs_err = Vec::new();
    let mut lens = Vec::new();
    for item in run.items.iter().filter(|i| task.is_none_or(|t| t == i.task)) {
        let slot = &item.slots[factor_idx];
        if slot.client_error.is_some() {
            c.client_failures += 1;
            continue;
        }
        c.scored += 1;
        let Some(chain) = &slot.chain else {
            c.parse_failures += 1;
            continue;
        };
        if is_correct(item.task, &item.answer, item.choices.as_deref(), chain) {
            c.correct += 1;
        }
        lens.push(chain_length(chain));
        let applied = item.recipe.scaled(factor);
        for p in &chain.degradations {
            predicted += 1;
            match applied.specs().iter().find(|t| t.kind() == p.kind()) {
                Some(t) => abs_err.push((p.intensity() - t.intensity()).abs()),
                None => misclassified += 1,
            }
        }
    }
    if c.scored > 0 {
        c.accuracy = Some(c.correct as f64 / c.scored as f64);
        c.parse_failure_rate = Some(c.parse_failures as f64 / c.scored as f64);
    }
    c.type_misclassification_rate = (predicted > 0).then(|| misclassified as f64 / predicted as f64);
    c.intensity_mae = (!abs_err.is_empty()).then(|| abs_err.iter().sum::<f64>() / abs_err.len() as f64);
    c.chain_length = LengthStats::from(lens);
    c
}

fn fill_deltas(cells: &mut [CellStats]) {
    let clean = cells
        .iter()
        .find(|c| c.factor == 0.0)
        .and_then(|c| c.accuracy);
    for c in cells {
        c.delta = match (clean, c.accuracy) {
            (Some(a0), Some(a)) => Some(a0 - a),
            _ => None,
        };
    }
}

pub fn score(run: &EvalRun) -> Result<EvalReport, EvalError> {
    let mut overall: Vec<CellStats> = (0..run.factors.len()).map(|f| cell(run, None, f)).collect();
    if overall.iter().all(|c| c.scored == 0) {
        return Err(EvalError::EmptyRun);
    }
    fill_deltas(&mut overall);
    let mut by_task = Vec::new();
    for task in [Task::Mcq, Task::Vqa, Task::Cap] {
        if !run.items.iter().any(|i| i.task == task) {
            continue;
        }
        let mut cells: Vec<CellStats> = (0..run.factors.len()).map(|f| cell(run, Some(task), f)).collect();
        fill_deltas(&mut cells);
        by_task.extend(cells);
    }
    Ok(EvalReport {
        seed: run.seed,
        design: "paired: one recipe per item, intensities scaled by each factor".into(),
        scoring: "MCQ: exact match on ANSWER; VQA/CAP: proxy, gold answer contained in CONCLUSION".into(),
        factors: run.factors.clone(),
        items: run.items.len(),
        item_failures: run.failures.clone(),
        overall,
        by_task,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Flat CSV with one row per (task, factor), task `ALL` for pooled rows.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out =
        String::from("task,factor,accuracy,delta,type_misclass_rate,intensity_mae,mean_chain_len\n");
    for c in report.overall.iter().chain(&report.by_task) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.task.map_or("ALL", Task::label),
            c.factor,
            opt(c.accuracy),
            opt(c.delta),
            opt(c.type_misclassification_rate),
            opt(c.intensity_mae),
            opt(c.chain_length.mean),
        );
    }
    out
}

pub const RUN_FILE: &str = "run.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

pub fn write_report(run: &EvalRun, report: &EvalReport, out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir)?;
    let pretty = |v: &dyn erased::Json| v.to_pretty();
    fs::write(out_dir.join(RUN_FILE), pretty(run))?;
    fs::write(out_dir.join(REPORT_JSON), pretty(report))?;
    fs::write(out_dir.join(REPORT_CSV), report_csv(report))?;
    Ok(())
}

mod erased {
    pub trait Json {
        fn to_pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_pretty(&self) -> String {
            serde_json::to_string_pretty(self).expect("serializes") + "\n"
        }
    }
}
