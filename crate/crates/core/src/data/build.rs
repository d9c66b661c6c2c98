//! Dataset construction: per sample, synthesize image/mask, instantiate a
//! question, render the teacher-only overlay, query the teacher under the
//! retry policy, gate and normalize, extract the ROI feature, and persist
//! the five-tuple. Rejected samples are logged and excluded.

use crate::data::gate::{quality_gate, GateConfig, QualityReport};
use crate::data::overlay::render_overlay;
use crate::data::synth::generate_sample;
use crate::data::teacher::{Teacher, TeacherError, TeacherRequest};
use crate::data::template::{generate_question, QuestionType, DEFAULT_TYPE_WEIGHTS};
use crate::error::{Error, Result};
use crate::image::{Mask, TargetKind, ToyImage};
use crate::io::{read_pgm, write_pgm};
use crate::roi::{extract_roi, RoiConfig, RoiFeatureRecord};
use crate::util;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One training sample: the five-tuple plus bookkeeping. Images, masks and
/// ROI features live in sibling files referenced by relative paths.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FiveTuple {
    pub id: usize,
    pub image: String,
    pub mask: String,
    pub roi: String,
    pub question: String,
    pub answer: String,
    pub chain: Vec<String>,
    pub question_type: QuestionType,
    pub target_name: String,
    pub target_kind: TargetKind,
    pub k: usize,
    pub pathway: String,
    pub retries: usize,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct BuildStats {
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub transport_failures: usize,
    pub retries_total: usize,
    pub per_k: BTreeMap<usize, usize>,
    pub per_type: BTreeMap<String, usize>,
    /// retries used on accepted samples -> count
    pub retry_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, serde::Serialize)]
struct TeacherLogLine<'a> {
    sample: usize,
    attempt: usize,
    strict: bool,
    raw: &'a str,
    outcome: String,
}

#[derive(Debug, Clone, serde::Serialize)]
struct RejectLine {
    sample: usize,
    question_type: String,
    failing_round: Option<u8>,
    detail: Option<String>,
    attempts: usize,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub n: usize,
    pub seed: u64,
    pub image_size: usize,
    pub type_weights: Vec<(QuestionType, f64)>,
    /// Retry budget after the first attempt.
    pub max_retries: usize,
    pub roi: RoiConfig,
    pub gate: GateConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 0,
            image_size: 32,
            type_weights: DEFAULT_TYPE_WEIGHTS.to_vec(),
            max_retries: 4,
            roi: RoiConfig {
                canvas: 32,
                ..RoiConfig::default()
            },
            gate: GateConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct BuildOutcome {
    pub stats: BuildStats,
    pub manifest_path: PathBuf,
}

pub fn build_dataset(
    config: &DataConfig,
    teacher: &mut dyn Teacher,
    out_dir: &Path,
) -> Result<BuildOutcome> {
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;
    std::fs::create_dir_all(out_dir.join("roi"))?;
    let encoder = config.roi.encoder();

    let mut tuples: Vec<FiveTuple> = Vec::with_capacity(config.n);
    let mut stats = BuildStats {
        requested: config.n,
        ..BuildStats::default()
    };
    let mut teacher_log = Vec::new();
    let mut rejects = Vec::new();

    for i in 0..config.n {
        let mut rng = util::rng_from_indexed(config.seed, "sample", i as u64);
        let (image, mask) = generate_sample(config.image_size, &mut rng)?;
        let target = image.target.clone().expect("generated samples carry targets");
        let question = generate_question(&target, &config.type_weights, &mut rng)?;
        let overlay = render_overlay(&image, &mask);

        let mut accepted: Option<(QualityReport, usize)> = None;
        let mut violation: Option<String> = None;
        let mut last_report: Option<QualityReport> = None;
        let mut attempts = 0usize;
        for attempt in 0..=config.max_retries {
            attempts = attempt + 1;
            let req = TeacherRequest {
                sample_index: i,
                overlay: &overlay,
                question: &question,
                target: &target,
                image_size: config.image_size,
                attempt,
                strict_retry: attempt > 0,
                violation: violation.clone(),
            };
            let raw = match teacher.generate(&req) {
                Ok(r) => r,
                Err(TeacherError::Transport(msg)) => {
                    stats.transport_failures += 1;
                    teacher_log.push(serde_json::to_string(&TeacherLogLine {
                        sample: i,
                        attempt,
                        strict: attempt > 0,
                        raw: "",
                        outcome: format!("transport: {msg}"),
                    })?);
                    violation = Some(format!("transport failure: {msg}"));
                    continue;
                }
            };
            let report = quality_gate(&raw.text, question.qtype, target.kind, &config.gate);
            teacher_log.push(serde_json::to_string(&TeacherLogLine {
                sample: i,
                attempt,
                strict: attempt > 0,
                raw: &raw.text,
                outcome: match report.failing_round {
                    None => "accepted".to_string(),
                    Some(r) => format!("failed round {r}"),
                },
            })?);
            if report.passed() {
                accepted = Some((report, attempt));
                break;
            }
            violation = report.violation_detail();
            last_report = Some(report);
        }

        let Some((report, retries)) = accepted else {
            stats.rejected += 1;
            rejects.push(serde_json::to_string(&RejectLine {
                sample: i,
                question_type: question.qtype.as_str().to_string(),
                failing_round: last_report.as_ref().and_then(|r| r.failing_round),
                detail: last_report.as_ref().and_then(|r| r.violation_detail()),
                attempts,
            })?);
            continue;
        };

        let parsed = report.parsed.as_ref().expect("accepted output parses");
        let answer = report
            .normalized_answer
            .clone()
            .expect("accepted output normalizes");
        let extraction = extract_roi(&image, &mask, &config.roi, &encoder)?;

        let id = tuples.len();
        let image_rel = format!("images/{id:04}.pgm");
        let mask_rel = format!("masks/{id:04}.pgm");
        let roi_rel = format!("roi/{id:04}.roi");
        write_pgm(&out_dir.join(&image_rel), config.image_size, image.pixels())?;
        let mask_px: Vec<f64> = mask.cells().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        write_pgm(&out_dir.join(&mask_rel), config.image_size, &mask_px)?;
        std::fs::write(out_dir.join(&roi_rel), extraction.record.to_bytes())?;

        let k = parsed.reasoning_chain.len();
        stats.accepted += 1;
        stats.retries_total += retries;
        *stats.per_k.entry(k).or_insert(0) += 1;
        *stats
            .per_type
            .entry(question.qtype.as_str().to_string())
            .or_insert(0) += 1;
        *stats.retry_histogram.entry(retries).or_insert(0) += 1;

        tuples.push(FiveTuple {
            id,
            image: image_rel,
            mask: mask_rel,
            roi: roi_rel,
            question: question.text.clone(),
            answer,
            chain: parsed.reasoning_chain.clone(),
            question_type: question.qtype,
            target_name: target.name.clone(),
            target_kind: target.kind,
            k,
            pathway: extraction.record.pathway.to_string(),
            retries,
        });
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    let mut manifest = std::fs::File::create(&manifest_path)?;
    for t in &tuples {
        writeln!(manifest, "{}", serde_json::to_string(t)?)?;
    }
    std::fs::write(
        out_dir.join("stats.json"),
        serde_json::to_string_pretty(&stats)?,
    )?;
    std::fs::write(out_dir.join("teacher_log.jsonl"), teacher_log.join("\n"))?;
    std::fs::write(out_dir.join("rejected.jsonl"), rejects.join("\n"))?;
    Ok(BuildOutcome {
        stats,
        manifest_path,
    })
}

/// An on-disk dataset, loaded eagerly at desk scale.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub tuples: Vec<FiveTuple>,
}

#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub tuple: FiveTuple,
    pub image: ToyImage,
    pub mask: Mask,
    pub roi: RoiFeatureRecord,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = std::fs::read_to_string(root.join("manifest.jsonl"))?;
        let mut tuples = Vec::new();
        for (lineno, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: FiveTuple = serde_json::from_str(line).map_err(|e| {
                Error::Format(format!("manifest line {}: {e}", lineno + 1))
            })?;
            let (lo, hi) = t.question_type.k_range();
            if t.k < lo || t.k > hi {
                return Err(Error::Format(format!(
                    "sample {}: K={} outside [{lo},{hi}] for {}",
                    t.id,
                    t.k,
                    t.question_type.as_str()
                )));
            }
            tuples.push(t);
        }
        Ok(Self {
            root: root.to_path_buf(),
            tuples,
        })
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn load_sample(&self, idx: usize) -> Result<LoadedSample> {
        let tuple = self.tuples[idx].clone();
        let (size, pixels) = read_pgm(&self.root.join(&tuple.image))?;
        let image = ToyImage::new(size, pixels, None)?;
        let (msize, mpixels) = read_pgm(&self.root.join(&tuple.mask))?;
        let mask = Mask::new(msize, mpixels.iter().map(|&v| v > 0.5).collect())?;
        let roi_bytes = std::fs::read(self.root.join(&tuple.roi))?;
        let roi = RoiFeatureRecord::from_bytes(&roi_bytes)?;
        Ok(LoadedSample {
            tuple,
            image,
            mask,
            roi,
        })
    }

    pub fn load_all(&self) -> Result<Vec<LoadedSample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }
}
