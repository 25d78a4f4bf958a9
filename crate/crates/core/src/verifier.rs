//! Static checks on generated skill code: syntax gate via an external
//! checker, lexical annotation coverage, interface usage and code size.

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::apidoc::{InterfaceCatalog, ResourceInterface};
use crate::capability::{CapabilityModel, PropertySpec};
use crate::prompt::{SkillSpecification, StateName};
use crate::retrieval::RetrievalResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Full,
    Partial,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: Status,
    pub detail: String,
}

impl Outcome {
    pub fn full(detail: impl Into<String>) -> Self {
        Self { status: Status::Full, detail: detail.into() }
    }

    pub fn partial(detail: impl Into<String>) -> Self {
        let detail = detail.into();
        assert!(!detail.is_empty(), "partial outcomes need a detail");
        Self { status: Status::Partial, detail }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self { status: Status::Fail, detail: detail.into() }
    }

    pub fn is_full(&self) -> bool {
        self.status == Status::Full
    }
}

/// Lexical markers of the target skill framework. All patterns are plain
/// substrings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationProfile {
    pub skill_marker: String,
    pub parameter_marker: String,
    pub output_marker: String,
    pub state_markers: BTreeMap<StateName, String>,
    /// Lines after a parameter/output marker searched for the bound name.
    pub binding_window: usize,
}

impl Default for AnnotationProfile {
    fn default() -> Self {
        Self {
            skill_marker: "@skill(".into(),
            parameter_marker: "@skill_parameter".into(),
            output_marker: "@skill_output".into(),
            state_markers: StateName::ALL
                .iter()
                .map(|s| (*s, format!("def {}(", s.as_str().to_ascii_lowercase())))
                .collect(),
            binding_window: 3,
        }
    }
}

impl AnnotationProfile {
    pub fn validate(&self) -> Result<(), String> {
        let empty = [&self.skill_marker, &self.parameter_marker, &self.output_marker]
            .into_iter()
            .chain(self.state_markers.values())
            .any(|p| p.is_empty());
        if empty {
            Err("annotation markers must not be empty".into())
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOutcome {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationOutcomes {
    pub skill: Outcome,
    pub parameters: ItemOutcome,
    pub outputs: ItemOutcome,
    pub states: ItemOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub retrieved_used: Vec<String>,
    pub retrieved_unused: Vec<String>,
    pub unretrieved_used: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overall {
    Pass,
    Partial,
    Fail,
}

impl Overall {
    /// Exit code of the `verify` command.
    pub fn exit_code(self) -> i32 {
        match self {
            Overall::Pass => 0,
            Overall::Fail => 1,
            Overall::Partial => 2,
        }
    }
}

pub const NOT_EVALUATED: &str = "not evaluated";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub skill: String,
    pub syntax: Outcome,
    pub annotations: AnnotationOutcomes,
    pub interface_usage: UsageReport,
    pub code_lines: usize,
    pub executability: String,
    pub behavior: String,
    pub overall: Overall,
    pub findings: Vec<String>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("cannot run syntax checker {command:?}: {source}")]
    CheckerSpawn { command: String, source: std::io::Error },
}

/// External syntax checker: `command[0]` is the program, `{file}` in any
/// argument is replaced by the path of the code file (appended if absent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxChecker {
    pub command: Vec<String>,
    pub file_extension: String,
}

pub fn check_syntax(code: &str, checker: Option<&SyntaxChecker>, allow_unchecked: bool) -> Result<Outcome, VerifyError> {
    let Some(checker) = checker.filter(|c| !c.command.is_empty()) else {
        return Ok(if allow_unchecked {
            Outcome::full("unchecked")
        } else {
            Outcome::fail("no checker configured")
        });
    };
    let spawn_err = |source| VerifyError::CheckerSpawn { command: checker.command.join(" "), source };
    let mut file = tempfile::Builder::new()
        .prefix("skill-")
        .suffix(&format!(".{}", checker.file_extension.trim_start_matches('.')))
        .tempfile()
        .map_err(spawn_err)?;
    file.write_all(code.as_bytes()).map_err(spawn_err)?;
    file.flush().map_err(spawn_err)?;
    let path = file.path().to_string_lossy().into_owned();

    let mut args: Vec<String> = checker.command[1..].iter().map(|a| a.replace("{file}", &path)).collect();
    if !checker.command[1..].iter().any(|a| a.contains("{file}")) {
        args.push(path.clone());
    }
    let output = Command::new(&checker.command[0])
        .args(&args)
        .output()
        .map_err(spawn_err)?;
    if output.status.success() {
        return Ok(Outcome::full(""));
    }
    let mut diagnostics = String::from_utf8_lossy(&output.stderr).into_owned();
    diagnostics.push_str(&String::from_utf8_lossy(&output.stdout));
    let diagnostics = diagnostics.replace(&path, "<generated>");
    let diagnostics = diagnostics.trim();
    Ok(Outcome::fail(if diagnostics.is_empty() {
        format!("checker exited with {}", output.status)
    } else {
        diagnostics.to_string()
    }))
}

fn normalize(token: &str) -> String {
    token.chars().filter(|c| *c != '_' && *c != '-').flat_map(char::to_lowercase).collect()
}

fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|t| !t.is_empty())
}

/// Identifier tokens bound to each marker occurrence: text after the marker
/// up to the end of the first line containing `def `, the next occurrence of
/// the same marker, or `window` lines, whichever comes first.
fn marker_regions(code: &str, marker: &str, window: usize) -> Vec<HashSet<String>> {
    let starts: Vec<usize> = code.match_indices(marker).map(|(p, _)| p).collect();
    starts
        .iter()
        .enumerate()
        .map(|(n, &pos)| {
            let begin = pos + marker.len();
            let limit = starts.get(n + 1).copied().unwrap_or(code.len());
            let mut end = begin;
            for (lines, line) in code[begin..limit].split_inclusive('\n').enumerate() {
                end += line.len();
                if line.contains("def ") || lines >= window {
                    break;
                }
            }
            tokens(&code[begin..end.min(limit)]).map(normalize).collect()
        })
        .collect()
}

/// Maximum matching between marker occurrences and required names; returns
/// the names left unmatched, in declaration order.
fn unmatched(names: &[&str], regions: &[HashSet<String>]) -> Vec<String> {
    let wanted: Vec<String> = names.iter().map(|n| normalize(n)).collect();
    let mut owner: Vec<Option<usize>> = vec![None; regions.len()];
    fn augment(
        name: usize,
        wanted: &[String],
        regions: &[HashSet<String>],
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for r in 0..regions.len() {
            if seen[r] || !regions[r].contains(&wanted[name]) {
                continue;
            }
            seen[r] = true;
            if owner[r].is_none_or(|other| augment(other, wanted, regions, owner, seen)) {
                owner[r] = Some(name);
                return true;
            }
        }
        false
    }
    for n in 0..names.len() {
        let mut seen = vec![false; regions.len()];
        augment(n, &wanted, regions, &mut owner, &mut seen);
    }
    // a later augmenting path can re-route but never unmatch a name
    let assigned: HashSet<usize> = owner.iter().flatten().copied().collect();
    names
        .iter()
        .enumerate()
        .filter(|(n, _)| !assigned.contains(n))
        .map(|(_, s)| s.to_string())
        .collect()
}

fn item_outcome(kind: &str, total: usize, missing: Vec<String>) -> ItemOutcome {
    let outcome = if total == 0 {
        Outcome::full("-")
    } else if missing.is_empty() {
        Outcome::full(format!("{total}/{total} {kind} annotated"))
    } else if missing.len() < total {
        Outcome::partial(format!(
            "{}/{total} {kind} annotated; missing: {}",
            total - missing.len(),
            missing.join(", ")
        ))
    } else {
        Outcome::fail(format!("no {kind} annotated; missing: {}", missing.join(", ")))
    };
    ItemOutcome { outcome, missing }
}

fn property_outcome(code: &str, marker: &str, window: usize, props: &[PropertySpec], kind: &str) -> ItemOutcome {
    let names: Vec<&str> = props.iter().map(|p| p.name.as_str()).collect();
    let regions = marker_regions(code, marker, window);
    item_outcome(kind, names.len(), unmatched(&names, &regions))
}

pub fn check_annotations(
    code: &str,
    cap: &CapabilityModel,
    spec: &SkillSpecification,
    profile: &AnnotationProfile,
) -> AnnotationOutcomes {
    let skill = match code.matches(profile.skill_marker.as_str()).count() {
        1 => Outcome::full(""),
        0 => Outcome::fail(format!("skill marker {:?} not found", profile.skill_marker)),
        n => Outcome::partial(format!("skill marker {:?} occurs {n} times", profile.skill_marker)),
    };
    let parameters = property_outcome(code, &profile.parameter_marker, profile.binding_window, &cap.inputs, "parameters");
    let outputs = property_outcome(code, &profile.output_marker, profile.binding_window, &cap.outputs, "outputs");

    let mut missing_states = Vec::new();
    for state in spec.state_behaviors.keys() {
        let default_marker;
        let marker = match profile.state_markers.get(state) {
            Some(m) => m.as_str(),
            None => {
                default_marker = format!("def {}(", state.as_str().to_ascii_lowercase());
                default_marker.as_str()
            }
        };
        if !code.contains(marker) {
            missing_states.push(state.to_string());
        }
    }
    let states = item_outcome("states", spec.state_behaviors.len(), missing_states);
    AnnotationOutcomes { skill, parameters, outputs, states }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// True if the interface path occurs verbatim, or its last path component
/// occurs as a whole word.
pub fn mentions_interface(code: &str, i: &ResourceInterface) -> bool {
    if i.name.contains('/') && code.contains(&i.name) {
        return true;
    }
    let word = i.short_name();
    code.match_indices(word).any(|(pos, _)| {
        let before = code[..pos].chars().next_back();
        let after = code[pos + word.len()..].chars().next();
        !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
    })
}

pub fn check_interface_usage(code: &str, retrieval: &RetrievalResult, catalog: &InterfaceCatalog) -> UsageReport {
    let mut report = UsageReport::default();
    let retrieved: HashSet<&str> = retrieval.hit_ids().into_iter().collect();
    for id in retrieval.hit_ids() {
        let used = catalog.get(id).is_some_and(|i| mentions_interface(code, i));
        if used {
            report.retrieved_used.push(id.to_string());
        } else {
            report.retrieved_unused.push(id.to_string());
        }
    }
    for i in &catalog.interfaces {
        let id = i.id();
        if !retrieved.contains(id.as_str()) && mentions_interface(code, i) {
            report.unretrieved_used.push(id);
        }
    }
    report
}

pub fn count_code_lines(code: &str) -> usize {
    code.lines().filter(|l| !l.trim().is_empty()).count()
}

/// Syntax failure fails the report; any other non-full outcome makes it
/// partial.
pub fn compile_report(
    skill: &str,
    syntax: Outcome,
    annotations: AnnotationOutcomes,
    interface_usage: UsageReport,
    code_lines: usize,
) -> VerificationReport {
    let mut findings = Vec::new();
    let checks: [(&str, &Outcome); 5] = [
        ("syntax", &syntax),
        ("skill annotation", &annotations.skill),
        ("parameter annotations", &annotations.parameters.outcome),
        ("output annotations", &annotations.outputs.outcome),
        ("state annotations", &annotations.states.outcome),
    ];
    for (name, o) in checks {
        if !o.is_full() {
            findings.push(format!("{name}: {}", o.detail));
        }
    }
    let overall = if syntax.status == Status::Fail {
        Overall::Fail
    } else if findings.is_empty() {
        Overall::Pass
    } else {
        Overall::Partial
    };
    VerificationReport {
        skill: skill.to_string(),
        syntax,
        annotations,
        interface_usage,
        code_lines,
        executability: NOT_EVALUATED.to_string(),
        behavior: NOT_EVALUATED.to_string(),
        overall,
        findings,
    }
}

/// All checks for one generated file.
#[allow(clippy::too_many_arguments)]
pub fn verify(
    code: &str,
    cap: &CapabilityModel,
    spec: &SkillSpecification,
    retrieval: &RetrievalResult,
    catalog: &InterfaceCatalog,
    profile: &AnnotationProfile,
    checker: Option<&SyntaxChecker>,
    allow_unchecked: bool,
) -> Result<VerificationReport, VerifyError> {
    let syntax = check_syntax(code, checker, allow_unchecked)?;
    let annotations = check_annotations(code, cap, spec, profile);
    let usage = check_interface_usage(code, retrieval, catalog);
    Ok(compile_report(&spec.skill_name, syntax, annotations, usage, count_code_lines(code)))
}
