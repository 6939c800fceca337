//! Five-step annotation pipeline producing degradation-aware training records.
//!
//! 1. sample a recipe and degrade the source image;
//! 2. describe the degradations' influence on the content;
//! 3. reconstruct the reasoning on the pristine scene;
//! 4. write a conclusion from that reasoning and the answer;
//! 5. rescale the three text segments to a word budget chosen by the
//!    recipe's total intensity.
//!
//! Steps 2 to 5 go through an [`AnnotatorClient`]. The builder adds the
//! segment tokens itself; annotators return plain text.

mod annotator;
mod templates;

pub use annotator::{
    validate_segment_text, AnnotationContext, AnnotationRequest, AnnotatorClient, AnnotatorError,
    MockAnnotator, RemoteAnnotator,
};
pub use templates::{placeholders, PromptTemplate, TemplateName, TemplateSet};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{chain_length, serialize_chain, ReasoningChain};
use crate::degradation::{apply_recipe, sample_recipe, DegradationRecipe, SamplingConfig};
use crate::error::DegradationError;
use crate::raster::{distortion_score, RasterImage};
use crate::rng::{hash_str, RngState};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{0}")]
    AnnotatorUnavailable(String),
    #[error("chain has {actual} words after {attempts} attempts, target {target} +/- {tolerance_pct}%")]
    AnnotationLengthViolation {
        target: usize,
        actual: usize,
        attempts: u32,
        tolerance_pct: u32,
    },
    #[error("{0}")]
    InvalidAnnotation(String),
    #[error("image decode: {0}")]
    ImageDecode(String),
    #[error(transparent)]
    Degradation(#[from] DegradationError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record invariant violated: {0}")]
    Invariant(String),
}

impl From<AnnotatorError> for DatasetError {
    fn from(e: AnnotatorError) -> Self {
        match e {
            AnnotatorError::Unavailable(m) => Self::AnnotatorUnavailable(m),
            AnnotatorError::Invalid(m) => Self::InvalidAnnotation(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceExample {
    pub id: String,
    pub image_path: PathBuf,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

/// Reads a JSONL manifest of [`SourceExample`]s. Relative image paths are
/// resolved against the manifest's directory.
pub fn load_sources(path: &Path) -> Result<Vec<SourceExample>, DatasetError> {
    let file = fs::File::open(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut src = parse_source_line(&line).map_err(|message| DatasetError::Manifest {
            line: i + 1,
            message,
        })?;
        if src.image_path.is_relative() {
            src.image_path = base.join(&src.image_path);
        }
        out.push(src);
    }
    Ok(out)
}

/// Parses and validates one manifest line (everything except image existence).
pub fn parse_source_line(line: &str) -> Result<SourceExample, String> {
    let src: SourceExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if src.id.trim().is_empty() {
        return Err("id is empty".into());
    }
    if src.answer.trim().is_empty() {
        return Err("answer is empty".into());
    }
    Ok(src)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LengthBand {
    Short,
    Medium,
    Long,
}

/// Total-intensity thresholds and word targets for the three length bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandConfig {
    /// Upper (exclusive) total intensity of the SHORT band.
    pub short_below: f64,
    /// Upper (exclusive) total intensity of the MEDIUM band.
    pub medium_below: f64,
    pub short_words: usize,
    pub medium_words: usize,
    pub long_words: usize,
    /// Accepted relative deviation of the final chain length from its target.
    pub tolerance: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            short_below: 0.5,
            medium_below: 1.5,
            short_words: 60,
            medium_words: 150,
            long_words: 300,
            tolerance: 0.2,
        }
    }
}

impl BandConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.short_below && self.short_below <= self.medium_below) {
            return Err("bands need 0 <= short_below <= medium_below".into());
        }
        if self.short_words == 0
            || self.short_words > self.medium_words
            || self.medium_words > self.long_words
        {
            return Err("band word targets must be positive and non-decreasing".into());
        }
        if !(0.0..1.0).contains(&self.tolerance) {
            return Err("tolerance must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Length band and word target for a recipe's total intensity.
pub fn target_length(total_intensity: f64, bands: &BandConfig) -> (LengthBand, usize) {
    if total_intensity < bands.short_below {
        (LengthBand::Short, bands.short_words)
    } else if total_intensity < bands.medium_below {
        (LengthBand::Medium, bands.medium_words)
    } else {
        (LengthBand::Long, bands.long_words)
    }
}

fn within_tolerance(actual: usize, target: usize, tolerance: f64) -> bool {
    (actual as f64 - target as f64).abs() <= tolerance * target as f64
}

/// Word budgets for influence / reasoning / conclusion summing to `total`.
fn segment_budgets(total: usize) -> [usize; 3] {
    let total = total.max(3);
    let influence = ((total as f64 * 0.3).round() as usize).max(1);
    let conclusion = ((total as f64 * 0.2).round() as usize).max(1);
    [influence, total - influence - conclusion, conclusion]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub source_id: String,
    pub original_image_path: PathBuf,
    /// Relative to the dataset directory.
    pub degraded_image_path: PathBuf,
    pub question: String,
    pub answer: String,
    pub recipe: DegradationRecipe,
    pub chain: ReasoningChain,
    pub chain_text: String,
    pub target_length: usize,
    pub band: LengthBand,
    pub split: Split,
}

impl DatasetRecord {
    /// Record invariants: chain TYPE entries equal the recipe rounded to two
    /// decimals, the chain is well formed, and its length is within tolerance.
    pub fn check(&self, tolerance: f64) -> Result<(), String> {
        let expected: Vec<_> = self.recipe.specs().iter().map(|s| s.rounded()).collect();
        if self.chain.degradations != expected {
            return Err(format!("{}: chain TYPE entries differ from recipe", self.id));
        }
        self.chain.validate()?;
        if serialize_chain(&self.chain) != self.chain_text {
            return Err(format!("{}: chain_text is not the canonical chain", self.id));
        }
        let len = chain_length(&self.chain);
        if !within_tolerance(len, self.target_length, tolerance) {
            return Err(format!(
                "{}: chain length {len} outside target {}",
                self.id, self.target_length
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    /// Records to produce; sources are cycled when this exceeds their count.
    /// `None` builds one record per source.
    pub records: Option<usize>,
    /// Extra attempts at length scaling before a record is failed.
    pub max_retries: u32,
    pub templates: TemplateSet,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            records: None,
            max_retries: 2,
            templates: TemplateSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 10.0 / 11.0,
        }
    }
}

/// Everything [`build_dataset`] needs besides the sources and annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildSettings {
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub bands: BandConfig,
    pub split: SplitConfig,
    pub options: BuildOptions,
    pub workers: usize,
}

impl Default for BuildSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            sampling: SamplingConfig::default(),
            bands: BandConfig::default(),
            split: SplitConfig::default(),
            options: BuildOptions::default(),
            workers: 4,
        }
    }
}

/// A finished record plus what the writer and report need.
#[derive(Debug, Clone)]
pub struct BuiltRecord {
    pub record: DatasetRecord,
    pub degraded: RasterImage,
    pub distortion: f64,
    pub first_attempt_compliant: bool,
}

fn recipe_listing(recipe: &DegradationRecipe) -> String {
    recipe
        .specs()
        .iter()
        .map(|s| format!("{}: {:.2}", s.kind().name(), crate::degradation::round2(s.intensity())))
        .collect::<Vec<_>>()
        .join("\n")
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect::<String>()
        + &format!("-{:08x}", hash_str(0, id) as u32)
}

/// Runs all five steps for one source.
pub fn build_record(
    src: &SourceExample,
    record_id: &str,
    rng: &mut RngState,
    annotator: &dyn AnnotatorClient,
    settings: &BuildSettings,
    split: Split,
) -> Result<BuiltRecord, DatasetError> {
    let original = RasterImage::load(&src.image_path).map_err(|e| match e {
        DegradationError::ImageDecode(m) => DatasetError::ImageDecode(m),
        other => DatasetError::Degradation(other),
    })?;

    // Step 1.
    let recipe = sample_recipe(rng, &settings.sampling)?;
    let degraded = apply_recipe(&original, &recipe)?;
    let distortion = distortion_score(&original, &degraded)?;
    let original_png = original.to_png();
    let degraded_png = degraded.to_png();

    let templates = &settings.options.templates;
    let listing = recipe_listing(&recipe);
    let base_ctx = AnnotationContext {
        recipe: recipe.clone(),
        question: src.question.clone(),
        answer: src.answer.clone(),
        segment: None,
        text: None,
        target_words: None,
        attempt: 0,
    };
    let ask = |name: TemplateName,
               vars: BTreeMap<&str, String>,
               images: Vec<Vec<u8>>,
               ctx: AnnotationContext|
     -> Result<String, DatasetError> {
        let request = AnnotationRequest {
            template: name,
            prompt: templates.get(name).render(&vars),
            images,
            context: ctx,
        };
        Ok(validate_segment_text(&annotator.generate(&request)?)?)
    };

    // Step 2: influence, from both images.
    let mut vars = BTreeMap::new();
    vars.insert("original_image", "[image 1]".to_string());
    vars.insert("degraded_image", "[image 2]".to_string());
    vars.insert("recipe", listing.clone());
    vars.insert("question", src.question.clone());
    vars.insert("answer", src.answer.clone());
    let influence = ask(
        TemplateName::Influence,
        vars.clone(),
        vec![original_png, degraded_png.clone()],
        base_ctx.clone(),
    )?;

    // Step 3: pristine reasoning, from the degraded image.
    vars.remove("original_image");
    vars.insert("degraded_image", "[image 1]".to_string());
    vars.insert("influence", influence.clone());
    let reasoning = ask(
        TemplateName::Reasoning,
        vars.clone(),
        vec![degraded_png],
        base_ctx.clone(),
    )?;

    // Step 4: conclusion, text only.
    let mut cvars = BTreeMap::new();
    cvars.insert("reasoning", reasoning.clone());
    cvars.insert("question", src.question.clone());
    cvars.insert("answer", src.answer.clone());
    let conclusion = ask(TemplateName::Conclusion, cvars, vec![], base_ctx.clone())?;

    // Step 5: length scaling by total intensity.
    let (band, target) = target_length(recipe.total_intensity(), &settings.bands);
    let len_template = match band {
        LengthBand::Short => TemplateName::LenShort,
        LengthBand::Medium => TemplateName::LenMedium,
        LengthBand::Long => TemplateName::LenLong,
    };
    let budgets = segment_budgets(target);
    let originals = [influence, reasoning, conclusion];
    let names = ["influence", "reasoning", "conclusion"];
    let degradations: Vec<_> = recipe.specs().iter().map(|s| s.rounded()).collect();
    let answer = src.choices.as_ref().map(|_| src.answer.trim().to_owned());

    let attempts = settings.options.max_retries + 1;
    let mut last_len = 0;
    for attempt in 0..attempts {
        let mut scaled = Vec::with_capacity(3);
        for ((text, name), budget) in originals.iter().zip(names).zip(budgets) {
            let mut lvars = BTreeMap::new();
            lvars.insert("segment", name.to_string());
            lvars.insert("text", text.clone());
            lvars.insert("target_words", budget.to_string());
            lvars.insert("recipe", listing.clone());
            lvars.insert("answer", src.answer.clone());
            let ctx = AnnotationContext {
                segment: Some(name.to_string()),
                text: Some(text.clone()),
                target_words: Some(budget),
                attempt,
                ..base_ctx.clone()
            };
            scaled.push(ask(len_template, lvars, vec![], ctx)?);
        }
        let [influence, reasoning, conclusion]: [String; 3] =
            scaled.try_into().expect("three segments");
        let chain = ReasoningChain {
            degradations: degradations.clone(),
            influence,
            reasoning,
            conclusion,
            answer: answer.clone(),
        };
        last_len = chain_length(&chain);
        if !within_tolerance(last_len, target, settings.bands.tolerance) {
            continue;
        }
        let record = DatasetRecord {
            id: record_id.to_owned(),
            source_id: src.id.clone(),
            original_image_path: src.image_path.clone(),
            degraded_image_path: PathBuf::from("images").join(format!("{}.png", file_stem_for(record_id))),
            question: src.question.clone(),
            answer: src.answer.clone(),
            recipe,
            chain_text: serialize_chain(&chain),
            chain,
            target_length: target,
            band,
            split,
        };
        record
            .check(settings.bands.tolerance)
            .map_err(DatasetError::Invariant)?;
        return Ok(BuiltRecord {
            record,
            degraded,
            distortion,
            first_attempt_compliant: attempt == 0,
        });
    }
    Err(DatasetError::AnnotationLengthViolation {
        target,
        actual: last_len,
        attempts,
        tolerance_pct: (settings.bands.tolerance * 100.0).round() as u32,
    })
}

/// Deterministic split of source ids: ids are ordered by a seeded hash and
/// the first `round(n * train_fraction)` go to train.
pub fn assign_splits<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    seed: u64,
    train_fraction: f64,
) -> HashMap<String, Split> {
    let mut keyed: Vec<(u64, &str)> = ids.into_iter().map(|id| (hash_str(seed, id), id)).collect();
    keyed.sort();
    keyed.dedup_by(|a, b| a.1 == b.1);
    let n_train = (keyed.len() as f64 * train_fraction).round() as usize;
    keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, id))| {
            let split = if i < n_train { Split::Train } else { Split::Val };
            (id.to_owned(), split)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityBin {
    pub total_intensity_lo: f64,
    pub total_intensity_hi: f64,
    pub records: usize,
    pub mean_mse: Option<f64>,
}

/// Stand-in for a quality-versus-intensity study: pixel MSE of each degraded
/// image against its source, summarized by total intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub note: String,
    pub pearson_r: Option<f64>,
    pub bins: Vec<QualityBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub requested: usize,
    pub succeeded: usize,
    pub train: usize,
    pub val: usize,
    pub failures: Vec<RecordFailure>,
    pub first_attempt_length_compliance: Option<f64>,
    pub intensity_histogram: Vec<IntensityBin>,
    pub band_histogram: BTreeMap<LengthBand, usize>,
    pub quality_vs_intensity: QualitySummary,
}

#[derive(Debug)]
pub struct BuildOutcome {
    /// Sorted by record id.
    pub records: Vec<BuiltRecord>,
    pub report: BuildReport,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn summarize(requested: usize, records: &[BuiltRecord], failures: Vec<RecordFailure>) -> BuildReport {
    let mut hist: Vec<IntensityBin> = (0..10)
        .map(|i| IntensityBin {
            lo: i as f64 / 10.0,
            hi: (i + 1) as f64 / 10.0,
            count: 0,
        })
        .collect();
    let mut bands = BTreeMap::new();
    for b in [LengthBand::Short, LengthBand::Medium, LengthBand::Long] {
        bands.insert(b, 0);
    }
    let mut totals = Vec::new();
    let mut mses = Vec::new();
    for r in records {
        for s in r.record.recipe.specs() {
            let bin = ((s.intensity() * 10.0) as usize).min(9);
            hist[bin].count += 1;
        }
        *bands.entry(r.record.band).or_default() += 1;
        totals.push(r.record.recipe.total_intensity());
        mses.push(r.distortion);
    }
    let quality_bins = (0..4)
        .map(|i| {
            let (lo, hi) = (i as f64, (i + 1) as f64);
            let picked: Vec<f64> = totals
                .iter()
                .zip(&mses)
                .filter(|(t, _)| **t >= lo && (**t < hi || i == 3))
                .map(|(_, m)| *m)
                .collect();
            QualityBin {
                total_intensity_lo: lo,
                total_intensity_hi: hi,
                records: picked.len(),
                mean_mse: (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64),
            }
        })
        .collect();
    let compliant = records.iter().filter(|r| r.first_attempt_compliant).count();
    BuildReport {
        requested,
        succeeded: records.len(),
        train: records.iter().filter(|r| r.record.split == Split::Train).count(),
        val: records.iter().filter(|r| r.record.split == Split::Val).count(),
        failures,
        first_attempt_length_compliance: (!records.is_empty())
            .then(|| compliant as f64 / records.len() as f64),
        intensity_histogram: hist,
        band_histogram: bands,
        quality_vs_intensity: QualitySummary {
            note: "stand-in metric: pixel MSE between source and degraded image, grouped by total recipe intensity".into(),
            pearson_r: pearson(&totals, &mses),
            bins: quality_bins,
        },
    }
}

/// Builds every record concurrently. Failed records are listed in the report
/// rather than aborting the run. Output order is by record id.
pub fn build_dataset(
    sources: &[SourceExample],
    annotator: &dyn AnnotatorClient,
    settings: &BuildSettings,
) -> Result<BuildOutcome, DatasetError> {
    if sources.is_empty() {
        return Err(DatasetError::Config("no sources".into()));
    }
    settings.sampling.validate()?;
    settings.bands.validate().map_err(DatasetError::Config)?;
    settings
        .options
        .templates
        .validate()
        .map_err(DatasetError::Config)?;
    let frac = settings.split.train_fraction;
    if !(0.0..=1.0).contains(&frac) {
        return Err(DatasetError::Config("train_fraction must lie in [0, 1]".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = sources.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(DatasetError::Config(format!("duplicate source id `{}`", dup.id)));
    }

    let n_src = sources.len();
    let requested = settings.options.records.unwrap_or(n_src);
    let jobs: Vec<(String, &SourceExample)> = (0..requested)
        .map(|k| {
            let src = &sources[k % n_src];
            let variant = k / n_src;
            let id = if variant == 0 {
                src.id.clone()
            } else {
                format!("{}#{variant}", src.id)
            };
            (id, src)
        })
        .collect();
    let splits = assign_splits(sources.iter().map(|s| s.id.as_str()), settings.seed, frac);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.max(1))
        .build()
        .map_err(|e| DatasetError::Config(e.to_string()))?;
    let results: Vec<(String, Result<BuiltRecord, DatasetError>)> = pool.install(|| {
        jobs.par_iter()
            .map(|(id, src)| {
                let mut rng = RngState::new(hash_str(settings.seed, id));
                let split = splits[&src.id];
                (id.clone(), build_record(src, id, &mut rng, annotator, settings, split))
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, res) in results {
        match res {
            Ok(r) => records.push(r),
            Err(e) => failures.push(RecordFailure {
                id,
                error: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    failures.sort_by(|a, b| a.id.cmp(&b.id));
    let report = summarize(requested, &records, failures);
    Ok(BuildOutcome { records, report })
}

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// Writes `dataset.jsonl`, `report.json`, and the degraded images under
/// `images/`.
pub fn write_dataset(outcome: &BuildOutcome, out_dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(out_dir.join("images"))?;
    let mut jsonl = Vec::new();
    for built in &outcome.records {
        built
            .degraded
            .save_png(&out_dir.join(&built.record.degraded_image_path))?;
        serde_json::to_writer(&mut jsonl, &built.record).expect("record serializes");
        jsonl.push(b'\n');
    }
    fs::write(out_dir.join(DATASET_FILE), jsonl)?;
    let mut report = fs::File::create(out_dir.join(REPORT_FILE))?;
    serde_json::to_writer_pretty(&mut report, &outcome.report).expect("report serializes");
    report.write_all(b"\n")?;
    Ok(())
}
