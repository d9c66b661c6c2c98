//! Pluggable teacher interface. The default mock teacher is rule-based: it
//! reads the hidden target metadata and emits templated reasoning steps in
//! strict JSON. It can inject violations on demand so the quality gate's
//! recall is testable. An HTTP client teacher conforms to the same
//! interface for external generators.

use crate::data::overlay::RgbImage;
use crate::data::synth;
use crate::data::template::{QuestionSpec, QuestionType};
use crate::image::{TargetKind, TargetMeta};

#[derive(Debug, Clone)]
pub struct TeacherRequest<'a> {
    pub sample_index: usize,
    pub overlay: &'a RgbImage,
    pub question: &'a QuestionSpec,
    pub target: &'a TargetMeta,
    pub image_size: usize,
    /// 0 on the first attempt, incremented per retry.
    pub attempt: usize,
    /// Set on retries: regenerate under stricter rules.
    pub strict_retry: bool,
    /// The violation that triggered the retry, for the escalation block.
    pub violation: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RawTeacherOutput {
    pub text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TeacherError {
    /// Retryable: the generator was unreachable or failed mid-flight.
    #[error("teacher transport failure: {0}")]
    Transport(String),
}

pub trait Teacher {
    fn generate(&mut self, req: &TeacherRequest) -> Result<RawTeacherOutput, TeacherError>;
    fn name(&self) -> &'static str;
}

// ---- reference output construction ---------------------------------------

/// The rule-based ground truth the mock teacher emits: answer text plus a
/// K-step chain derived from the target metadata.
pub fn reference_output(
    question: &QuestionSpec,
    target: &TargetMeta,
    image_size: usize,
) -> (String, Vec<String>) {
    let name = &target.name;
    let pol = synth::polarity_word(target.bright);
    let size = synth::size_word(&target.rect);
    let h3 = synth::horizontal_third(&target.rect, image_size);
    let v3 = synth::vertical_third(&target.rect, image_size);
    match question.qtype {
        QuestionType::YesNo => {
            if question.positive {
                (
                    format!("Yes, the {name} is visible."),
                    vec![format!("a {pol} region matching the {name} is present .")],
                )
            } else {
                let asked = &question.asked_name;
                (
                    format!("No, the {asked} is not visible."),
                    vec![format!("no region matching the {asked} is present .")],
                )
            }
        }
        // deliberately bare: the gate's normalization round expands it
        QuestionType::Identify => (
            name.clone(),
            vec![format!("a {pol} region stands out and matches the {name} .")],
        ),
        QuestionType::LocationChoice => (
            format!("The {name} is in the {h3} part of the image."),
            vec![format!("the region lies in the {h3} part horizontally .")],
        ),
        QuestionType::Location => (
            format!("The {name} is in the {v3} {h3} part of the image."),
            vec![
                format!("a {pol} region stands out against the background ."),
                format!("it lies in the {v3} {h3} part of the image ."),
            ],
        ),
        QuestionType::Describe => {
            let mut chain = vec![
                format!("a {pol} region stands out against the background ."),
                format!("the region is {size} and rectangular ."),
            ];
            if question.k >= 3 {
                chain.push(format!("its intensity level matches the {name} ."));
            }
            (format!("The {name} appears {pol} and {size}."), chain)
        }
        QuestionType::Reasoning => {
            let mut chain = vec![
                format!("a {pol} region stands out against the background ."),
                format!("it lies in the {v3} {h3} part of the image ."),
                format!("the region is {size} and rectangular ."),
            ];
            if question.k >= 4 {
                chain.push(format!("this appearance matches the {name} ."));
            }
            (
                format!("The {name} is {pol} and lies in the {v3} {h3} part."),
                chain,
            )
        }
    }
}

// ---- fault injection ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultClass {
    /// Output is not valid JSON (round 1).
    Malformed,
    /// Valid JSON, wrong schema (round 1).
    Schema,
    /// Annotation-leakage term in a chain step (round 2).
    Leak,
    /// Pathology wording on a normal-anatomy sample (round 3).
    Pathology,
    /// Patient-space spatial reference (round 4).
    MixedSpace,
    /// Step count outside the type's range (round 5).
    WrongSteps,
    /// Transport failure instead of output.
    Transport,
}

impl FaultClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "malformed" => Some(Self::Malformed),
            "schema" => Some(Self::Schema),
            "leak" => Some(Self::Leak),
            "pathology" => Some(Self::Pathology),
            "mixed_space" | "mixedspace" => Some(Self::MixedSpace),
            "wrong_steps" | "wrongsteps" => Some(Self::WrongSteps),
            "transport" => Some(Self::Transport),
        _ => None,
        }
    }

    /// The gate round expected to catch this class (transport never
    /// reaches the gate).
    pub fn designated_round(self) -> Option<u8> {
        match self {
            Self::Malformed | Self::Schema => Some(1),
            Self::Leak => Some(2),
            Self::Pathology => Some(3),
            Self::MixedSpace => Some(4),
            Self::WrongSteps => Some(5),
            Self::Transport => None,
        }
    }
}

/// One injection rule: samples whose index is divisible by `period` emit
/// the faulted output on their first `shots` attempts.
#[derive(Debug, Clone)]
pub struct FaultSpec {
    pub class: FaultClass,
    pub period: usize,
    pub shots: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    pub specs: Vec<FaultSpec>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    /// Parses `class:period(:shots)?` entries, comma separated, e.g.
    /// `leak:10` or `leak:10:2,wrong_steps:7`.
    pub fn parse(spec: &str) -> crate::error::Result<Self> {
        let mut specs = Vec::new();
        for entry in spec.split(',').filter(|s| !s.trim().is_empty()) {
            let parts: Vec<&str> = entry.trim().split(':').collect();
            let class = FaultClass::parse(parts[0]).ok_or_else(|| {
                crate::error::Error::Argument(format!("unknown fault class '{}'", parts[0]))
            })?;
            let period: usize = parts
                .get(1)
                .unwrap_or(&"1")
                .parse()
                .map_err(|_| crate::error::Error::Argument(format!("bad fault period in '{entry}'")))?;
            let shots: usize = parts
                .get(2)
                .unwrap_or(&"1")
                .parse()
                .map_err(|_| crate::error::Error::Argument(format!("bad fault shots in '{entry}'")))?;
            if period == 0 {
                return Err(crate::error::Error::Argument(
                    "fault period must be >= 1".into(),
                ));
            }
            specs.push(FaultSpec {
                class,
                period,
                shots,
            });
        }
        Ok(Self { specs })
    }

    pub fn active_fault(&self, sample_index: usize, attempt: usize) -> Option<FaultClass> {
        self.specs
            .iter()
            .find(|s| sample_index % s.period == 0 && attempt < s.shots)
            .map(|s| s.class)
    }
}

// ---- the mock teacher -----------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct MockTeacher {
    pub faults: FaultPlan,
}

impl MockTeacher {
    pub fn new(faults: FaultPlan) -> Self {
        Self { faults }
    }

    fn emit_json(answer: &str, chain: &[String]) -> String {
        serde_json::json!({
            "final_answer": answer,
            "reasoning_chain": chain,
        })
        .to_string()
    }
}

impl Teacher for MockTeacher {
    fn generate(&mut self, req: &TeacherRequest) -> Result<RawTeacherOutput, TeacherError> {
        let (answer, mut chain) = reference_output(req.question, req.target, req.image_size);
        let fault = self.faults.active_fault(req.sample_index, req.attempt);
        let text = match fault {
            Some(FaultClass::Transport) => {
                return Err(TeacherError::Transport("injected transport fault".into()))
            }
            Some(FaultClass::Malformed) => "final_answer: not json {".to_string(),
            Some(FaultClass::Schema) => serde_json::json!({
                "answer": answer,
                "steps": chain,
            })
            .to_string(),
            Some(FaultClass::Leak) => {
                let step = format!("the segmentation mask highlights the {} .", req.target.name);
                chain[0] = step;
                Self::emit_json(&answer, &chain)
            }
            Some(FaultClass::Pathology) => {
                // only meaningful on organ samples; lesion samples pass
                chain[0] = format!("a lesion is visible near the {} .", req.target.name);
                Self::emit_json(&answer, &chain)
            }
            Some(FaultClass::MixedSpace) => {
                chain[0] = "the finding sits on the patient's right side .".to_string();
                Self::emit_json(&answer, &chain)
            }
            Some(FaultClass::WrongSteps) => {
                chain.push("an extra unjustified step .".to_string());
                chain.push("another extra step .".to_string());
                chain.push("yet another step .".to_string());
                chain.truncate(req.question.qtype.k_range().1 + 1);
                Self::emit_json(&answer, &chain)
            }
            None => Self::emit_json(&answer, &chain),
        };
        Ok(RawTeacherOutput { text })
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}

// ---- the http teacher -----------------------------------------------------

/// Wire request the HTTP teacher posts. The overlay rides along as flat
/// 8-bit RGB so any generator can reconstruct the teacher view.
#[derive(Debug, serde::Serialize)]
pub struct TeacherWireRequest<'a> {
    pub question: &'a str,
    pub question_type: &'a str,
    pub k_min: usize,
    pub k_max: usize,
    pub target_name: &'a str,
    pub target_kind: TargetKind,
    pub strict_retry: bool,
    pub attempt: usize,
    pub violation: Option<&'a str>,
    pub overlay_size: usize,
    pub overlay_rgb8: Vec<u8>,
}

/// Minimal blocking HTTP/1.1 client teacher. POSTs the wire request as
/// JSON; the response body is taken verbatim as the raw teacher output.
#[derive(Debug, Clone)]
pub struct HttpTeacher {
    pub host: String,
    pub port: u16,
    pub path: String,
    pub timeout: std::time::Duration,
}

impl HttpTeacher {
    /// Accepts `http://host:port/path` urls.
    pub fn from_url(url: &str) -> crate::error::Result<Self> {
        let rest = url
            .strip_prefix("http://")
            .ok_or_else(|| crate::error::Error::Argument(format!("unsupported url '{url}'")))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], rest[i..].to_string()),
            None => (rest, "/".to_string()),
        };
        let (host, port) = match authority.rfind(':') {
            Some(i) => (
                authority[..i].to_string(),
                authority[i + 1..].parse::<u16>().map_err(|_| {
                    crate::error::Error::Argument(format!("bad port in '{url}'"))
                })?,
            ),
            None => (authority.to_string(), 80),
        };
        Ok(Self {
            host,
            port,
            path,
            timeout: std::time::Duration::from_secs(10),
        })
    }
}

impl Teacher for HttpTeacher {
    fn generate(&mut self, req: &TeacherRequest) -> Result<RawTeacherOutput, TeacherError> {
        use std::io::{Read, Write};
        let (k_min, k_max) = req.question.qtype.k_range();
        let overlay_rgb8: Vec<u8> = req
            .overlay
            .pixels
            .iter()
            .flat_map(|px| px.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        let wire = TeacherWireRequest {
            question: &req.question.text,
            question_type: req.question.qtype.as_str(),
            k_min,
            k_max,
            target_name: &req.target.name,
            target_kind: req.target.kind,
            strict_retry: req.strict_retry,
            attempt: req.attempt,
            violation: req.violation.as_deref(),
            overlay_size: req.overlay.size,
            overlay_rgb8,
        };
        let body = serde_json::to_string(&wire)
            .map_err(|e| TeacherError::Transport(format!("encode: {e}")))?;
        let addr = format!("{}:{}", self.host, self.port);
        let mut stream = std::net::TcpStream::connect(&addr)
            .map_err(|e| TeacherError::Transport(format!("connect {addr}: {e}")))?;
        stream
            .set_read_timeout(Some(self.timeout))
            .map_err(|e| TeacherError::Transport(e.to_string()))?;
        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| TeacherError::Transport(format!("send: {e}")))?;
        let mut response = Vec::new();
        stream
            .read_to_end(&mut response)
            .map_err(|e| TeacherError::Transport(format!("recv: {e}")))?;
        let text = String::from_utf8_lossy(&response);
        let (head, payload) = text
            .split_once("\r\n\r\n")
            .ok_or_else(|| TeacherError::Transport("malformed http response".into()))?;
        let status = head.lines().next().unwrap_or_default();
        if !status.contains(" 200") {
            return Err(TeacherError::Transport(format!("http status '{status}'")));
        }
        Ok(RawTeacherOutput {
            text: payload.to_string(),
        })
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Rect;
    use rand::SeedableRng;

    fn request_parts() -> (QuestionSpec, TargetMeta, RgbImage) {
        let target = TargetMeta {
            name: "liver".into(),
            kind: TargetKind::Organ,
            rect: Rect { row: 2, col: 3, height: 8, width: 10 },
            bright: true,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = crate::data::template::generate_question(
            &target,
            &[(QuestionType::YesNo, 1.0)],
            &mut rng,
        )
        .unwrap();
        let overlay = RgbImage {
            size: 4,
            pixels: vec![[0.5, 0.5, 0.5]; 16],
        };
        (q, target, overlay)
    }

    #[test]
    fn mock_emits_strict_json_with_period_terminated_answer() {
        let (q, target, overlay) = request_parts();
        let mut teacher = MockTeacher::default();
        let req = TeacherRequest {
            sample_index: 1,
            overlay: &overlay,
            question: &q,
            target: &target,
            image_size: 32,
            attempt: 0,
            strict_retry: false,
            violation: None,
        };
        let out = teacher.generate(&req).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.text).unwrap();
        let answer = v["final_answer"].as_str().unwrap();
        assert!(answer.ends_with('.'));
        let chain = v["reasoning_chain"].as_array().unwrap();
        assert_eq!(chain.len(), 1, "yes/no carries exactly one step");
    }

    #[test]
    fn fault_plan_parses_and_targets_attempts() {
        let plan = FaultPlan::parse("leak:2,wrong_steps:3:2").unwrap();
        assert_eq!(plan.specs.len(), 2);
        assert_eq!(plan.active_fault(2, 0), Some(FaultClass::Leak));
        assert_eq!(plan.active_fault(2, 1), None, "one shot only");
        assert_eq!(plan.active_fault(3, 0), Some(FaultClass::WrongSteps));
        assert_eq!(plan.active_fault(3, 1), Some(FaultClass::WrongSteps));
        assert_eq!(plan.active_fault(3, 2), None);
        assert_eq!(plan.active_fault(1, 0), None);
        assert!(FaultPlan::parse("nonsense:1").is_err());
    }

    #[test]
    fn leak_fault_injects_forbidden_wording() {
        let (q, target, overlay) = request_parts();
        let mut teacher = MockTeacher::new(FaultPlan::parse("leak:1").unwrap());
        let req = TeacherRequest {
            sample_index: 0,
            overlay: &overlay,
            question: &q,
            target: &target,
            image_size: 32,
            attempt: 0,
            strict_retry: false,
            violation: None,
        };
        let out = teacher.generate(&req).unwrap();
        assert!(out.text.contains("segmentation mask"));
        // the retry attempt is clean
        let retry = TeacherRequest { attempt: 1, strict_retry: true, ..req };
        let out = teacher.generate(&retry).unwrap();
        assert!(!out.text.contains("segmentation mask"));
    }

    #[test]
    fn malformed_fault_is_not_json() {
        let (q, target, overlay) = request_parts();
        let mut teacher = MockTeacher::new(FaultPlan::parse("malformed:1").unwrap());
        let req = TeacherRequest {
            sample_index: 0,
            overlay: &overlay,
            question: &q,
            target: &target,
            image_size: 32,
            attempt: 0,
            strict_retry: false,
            violation: None,
        };
        let out = teacher.generate(&req).unwrap();
        assert!(serde_json::from_str::<serde_json::Value>(&out.text).is_err());
    }

    #[test]
    fn http_url_parsing() {
        let t = HttpTeacher::from_url("http://127.0.0.1:8811/teach").unwrap();
        assert_eq!(t.host, "127.0.0.1");
        assert_eq!(t.port, 8811);
        assert_eq!(t.path, "/teach");
        assert!(HttpTeacher::from_url("https://x").is_err());
    }
}
