//! Skill specifications, few-shot examples and generation prompt assembly.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::capability::CapabilityModel;
use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::retrieval::RetrievalResult;

/// PackML states that can carry user-specified behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StateName {
    Starting,
    Execute,
    Completing,
    Resetting,
    Holding,
    Unholding,
    Suspending,
    Unsuspending,
    Stopping,
    Aborting,
    Clearing,
}

impl StateName {
    pub const ALL: [StateName; 11] = [
        StateName::Starting,
        StateName::Execute,
        StateName::Completing,
        StateName::Resetting,
        StateName::Holding,
        StateName::Unholding,
        StateName::Suspending,
        StateName::Unsuspending,
        StateName::Stopping,
        StateName::Aborting,
        StateName::Clearing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StateName::Starting => "Starting",
            StateName::Execute => "Execute",
            StateName::Completing => "Completing",
            StateName::Resetting => "Resetting",
            StateName::Holding => "Holding",
            StateName::Unholding => "Unholding",
            StateName::Suspending => "Suspending",
            StateName::Unsuspending => "Unsuspending",
            StateName::Stopping => "Stopping",
            StateName::Aborting => "Aborting",
            StateName::Clearing => "Clearing",
        }
    }
}

impl fmt::Display for StateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StateName::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillSpecification {
    pub skill_name: String,
    pub interface_type: String,
    pub description: Option<String>,
    pub state_behaviors: BTreeMap<StateName, String>,
    pub target_language: String,
    pub framework: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SkillSpecError {
    #[error("skill specification: {0}")]
    Schema(String),
    #[error("skill specification has no behavior for the mandatory Execute state")]
    MissingExecuteBehavior,
    #[error("unknown state {name:?}; allowed states: {}", allowed.join(", "))]
    UnknownState { name: String, allowed: Vec<String> },
    #[error("unsupported skill interface type {name:?}; supported: {}", supported.join(", "))]
    UnsupportedInterfaceType { name: String, supported: Vec<String> },
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses a `.skillspec.json` document, checking it against the supported
/// skill interface types.
pub fn parse_skill_spec(document_text: &str, supported_interface_types: &[String]) -> Result<SkillSpecification, SkillSpecError> {
    let schema = |m: String| SkillSpecError::Schema(m);
    let root: Value = serde_json::from_str(document_text).map_err(|e| schema(e.to_string()))?;
    let Value::Object(mut obj) = root else {
        return Err(schema("expected an object".into()));
    };
    let mut string = |key: &str, required: bool| -> Result<Option<String>, SkillSpecError> {
        match obj.remove(key) {
            Some(Value::String(s)) => Ok(Some(s)),
            None | Some(Value::Null) if !required => Ok(None),
            None => Err(schema(format!("missing field {key:?}"))),
            Some(_) => Err(schema(format!("field {key:?} must be a string"))),
        }
    };
    let skill_name = string("skill_name", true)?.unwrap_or_default();
    let interface_type = string("interface_type", true)?.unwrap_or_default();
    let description = string("description", false)?;
    let target_language = string("target_language", true)?.unwrap_or_default();
    let framework = string("framework", true)?.unwrap_or_default();
    let states = match obj.remove("states") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(schema("field \"states\" must be an object".into())),
        None => return Err(SkillSpecError::MissingExecuteBehavior),
    };
    if let Some(key) = obj.keys().next() {
        return Err(schema(format!("unknown field {key:?}")));
    }

    if !is_identifier(&skill_name) {
        return Err(schema(format!("skill_name {skill_name:?} is not an identifier")));
    }
    if target_language.trim().is_empty() || framework.trim().is_empty() {
        return Err(schema("target_language and framework must not be empty".into()));
    }
    if !supported_interface_types.contains(&interface_type) {
        return Err(SkillSpecError::UnsupportedInterfaceType {
            name: interface_type,
            supported: supported_interface_types.to_vec(),
        });
    }

    let mut state_behaviors = BTreeMap::new();
    for (key, value) in states {
        let state: StateName = key.parse().map_err(|_| SkillSpecError::UnknownState {
            name: key.clone(),
            allowed: StateName::ALL.iter().map(|s| s.to_string()).collect(),
        })?;
        let Value::String(text) = value else {
            return Err(schema(format!("behavior for state {key:?} must be a string")));
        };
        if text.trim().is_empty() {
            if state == StateName::Execute {
                return Err(SkillSpecError::MissingExecuteBehavior);
            }
            return Err(schema(format!("behavior for state {key:?} is empty")));
        }
        if state_behaviors.insert(state, text).is_some() {
            return Err(schema(format!("state {state} is specified more than once")));
        }
    }
    if !state_behaviors.contains_key(&StateName::Execute) {
        return Err(SkillSpecError::MissingExecuteBehavior);
    }
    Ok(SkillSpecification {
        skill_name,
        interface_type,
        description,
        state_behaviors,
        target_language,
        framework,
    })
}

pub fn serialize_skill_spec(spec: &SkillSpecification) -> String {
    let mut states = Map::new();
    for (state, text) in &spec.state_behaviors {
        states.insert(state.to_string(), Value::String(text.clone()));
    }
    let mut obj = Map::new();
    obj.insert("skill_name".into(), spec.skill_name.clone().into());
    obj.insert("interface_type".into(), spec.interface_type.clone().into());
    if let Some(d) = &spec.description {
        obj.insert("description".into(), d.clone().into());
    }
    obj.insert("target_language".into(), spec.target_language.clone().into());
    obj.insert("framework".into(), spec.framework.clone().into());
    obj.insert("states".into(), Value::Object(states));
    let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("serializes");
    text.push('\n');
    text
}

fn render_spec(spec: &SkillSpecification) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Skill name: {}", spec.skill_name);
    let _ = writeln!(out, "Skill interface type: {}", spec.interface_type);
    if let Some(d) = &spec.description {
        let _ = writeln!(out, "Description: {}", d.trim());
    }
    out.push_str("Behavior per state:\n");
    for (state, text) in &spec.state_behaviors {
        let _ = writeln!(out, "- {state}: {}", text.trim());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotExample {
    pub name: String,
    pub capability_turtle: String,
    pub skill_spec: SkillSpecification,
    pub implementation: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FewShotError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("few-shot example {name}: {source}")]
    Spec { name: String, source: SkillSpecError },
    #[error("few-shot example {0} has an empty part")]
    EmptyPart(String),
}

/// Loads `dir/<name>/{capability.ttl, spec.skillspec.json, implementation.txt}`.
/// Without explicit names every subdirectory is loaded, sorted by name.
pub fn load_few_shots(dir: &Path, names: Option<&[String]>, supported_interface_types: &[String]) -> Result<Vec<FewShotExample>, FewShotError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FewShotError::Io { path, source }
    };
    let names: Vec<String> = match names {
        Some(n) => n.to_vec(),
        None => {
            let mut n: Vec<String> = fs::read_dir(dir)
                .map_err(io(dir))?
                .filter_map(Result::ok)
                .filter(|e| e.path().is_dir())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            n.sort();
            n
        }
    };
    names
        .into_iter()
        .map(|name| {
            let base = dir.join(&name);
            let read = |file: &str| {
                let p = base.join(file);
                fs::read_to_string(&p).map_err(io(&p))
            };
            let capability_turtle = read("capability.ttl")?;
            let spec_text = read("spec.skillspec.json")?;
            let implementation = read("implementation.txt")?;
            let skill_spec = parse_skill_spec(&spec_text, supported_interface_types)
                .map_err(|source| FewShotError::Spec { name: name.clone(), source })?;
            if capability_turtle.trim().is_empty() || implementation.trim().is_empty() {
                return Err(FewShotError::EmptyPart(name));
            }
            Ok(FewShotExample { name, capability_turtle, skill_spec, implementation })
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("no few-shot examples configured")]
    NoFewShots,
    #[error("cannot render prompt section {section}: {message}")]
    SectionRender { section: &'static str, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSection {
    pub title: &'static str,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub sections: Vec<PromptSection>,
    pub rendered_text: String,
}

pub const EXAMPLE_HEADER: &str = "--- EXAMPLE ";
pub const INTERFACE_HEADER: &str = "--- INTERFACE ";

const SECTION_TITLES: [&str; 7] = [
    "SKILL STRUCTURE",
    "SKILL FRAMEWORK",
    "EXAMPLES",
    "RESOURCE INTERFACES",
    "CAPABILITY",
    "SKILL SPECIFICATION",
    "TARGET",
];

const STRUCTURE_INSTRUCTIONS: &str = "\
You implement a skill: the executable counterpart of the capability given below.
- Implement the skill as one class. Mark it as a skill and give it a skill IRI derived from the capability IRI.
- Every input of the capability becomes a skill parameter named after the input.
- Every output of the capability becomes a skill output named after the output.
- Implement one method for every state that has specified behavior. Put the core functionality in the execute state.
- Control the resource only through the resource interfaces listed in this prompt.
- Keep the behavior exactly as specified per state; do not invent extra constants the capability does not define.";

/// Renders the seven prompt sections in fixed order. `framework_doc` is the
/// skill-framework explanation for the target language, if one is registered.
pub fn build_prompt(
    cap: &CapabilityModel,
    spec: &SkillSpecification,
    retrieval: &RetrievalResult,
    few_shots: &[FewShotExample],
    framework_doc: Option<&str>,
) -> Result<Prompt, PromptError> {
    if few_shots.is_empty() {
        return Err(PromptError::NoFewShots);
    }
    if retrieval.selected_docs.is_empty() {
        return Err(PromptError::SectionRender {
            section: "RESOURCE INTERFACES",
            message: "retrieval result is empty".into(),
        });
    }
    let lang = spec.target_language.to_ascii_lowercase();

    let framework = match framework_doc {
        Some(doc) => format!(
            "Use the {} skill framework described below.\n\n{}",
            spec.target_language,
            doc.trim_end()
        ),
        None => format!(
            "No skill framework is registered for {}. Generate only the core behavior of the skill \
             as plain {} code so that it can be integrated into an execution environment by hand.",
            spec.target_language, spec.target_language
        ),
    };

    let mut examples = String::new();
    for (n, ex) in few_shots.iter().enumerate() {
        for (part, text) in [("capability", &ex.capability_turtle), ("implementation", &ex.implementation)] {
            if text.contains(EXAMPLE_HEADER) || text.contains(INTERFACE_HEADER) {
                return Err(PromptError::SectionRender {
                    section: "EXAMPLES",
                    message: format!("{part} of example {} contains a reserved block header", ex.name),
                });
            }
        }
        let _ = write!(
            examples,
            "{EXAMPLE_HEADER}{}: {} ---\nCapability:\n{}\n\nSkill specification:\n{}\nImplementation:\n```{lang}\n{}\n```\n--- END OF EXAMPLE {} ---\n\n",
            n + 1,
            ex.name,
            ex.capability_turtle.trim_end(),
            render_spec(&ex.skill_spec),
            ex.implementation.trim_end(),
            n + 1,
        );
    }

    let mut interfaces = String::new();
    for (n, doc) in retrieval.selected_docs.iter().enumerate() {
        let _ = write!(
            interfaces,
            "{INTERFACE_HEADER}{}: {} ---\n{}\n",
            n + 1,
            doc.interface_id,
            doc.documentation.trim_end()
        );
    }

    let target = format!(
        "Implement the skill in {} for the {} framework. Return the complete implementation in a single fenced code block.",
        spec.target_language, spec.framework
    );

    let bodies = [
        STRUCTURE_INSTRUCTIONS.to_string(),
        framework,
        examples.trim_end().to_string(),
        interfaces.trim_end().to_string(),
        cap.raw_text.trim_end().to_string(),
        render_spec(spec).trim_end().to_string(),
        target,
    ];
    let sections: Vec<PromptSection> = SECTION_TITLES
        .iter()
        .zip(bodies)
        .map(|(title, body)| PromptSection { title, body })
        .collect();
    let mut rendered_text = String::new();
    for (n, s) in sections.iter().enumerate() {
        let _ = write!(rendered_text, "=== {}. {} ===\n{}\n\n", n + 1, s.title, s.body);
    }
    rendered_text.truncate(rendered_text.trim_end().len());
    rendered_text.push('\n');
    Ok(Prompt { sections, rendered_text })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedCode {
    pub code: String,
    pub warnings: Vec<String>,
}

const GENERATION_SYSTEM: &str = "You are an expert automation engineer who writes skill implementations.";

pub fn generate_skill(prompt: &Prompt, gateway: &Gateway) -> Result<GeneratedCode, PromptError> {
    let completion = gateway.chat(&gateway.chat_request(vec![
        ChatMessage::system(GENERATION_SYSTEM),
        ChatMessage::user(prompt.rendered_text.clone()),
    ]))?;
    if completion.trim().is_empty() {
        return Err(GatewayError::EmptyCompletion.into());
    }
    Ok(extract_code(&completion))
}

/// One fenced block: its body. Several: the longest. None: the whole text
/// (with a warning). Trailing whitespace is stripped per line.
pub fn extract_code(completion: &str) -> GeneratedCode {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut open: Option<Vec<&str>> = None;
    for line in completion.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut open, fence) {
            (None, true) => open = Some(Vec::new()),
            (Some(_), true) => blocks.push(open.take().expect("open block")),
            (Some(body), false) => body.push(line),
            (None, false) => {}
        }
    }
    let mut warnings = Vec::new();
    if open.is_some() {
        warnings.push("unterminated code fence ignored".to_string());
    }
    let body = match blocks.len() {
        0 => {
            warnings.push("completion has no fenced code block; using the whole text".to_string());
            completion.lines().collect::<Vec<_>>()
        }
        1 => blocks.remove(0),
        n => {
            warnings.push(format!("completion has {n} code blocks; using the longest"));
            let len = |b: &Vec<&str>| b.iter().map(|l| l.len() + 1).sum::<usize>();
            let best = (0..n).fold(0, |best, i| if len(&blocks[i]) > len(&blocks[best]) { i } else { best });
            blocks.swap_remove(best)
        }
    };
    let mut code: String = body
        .iter()
        .map(|l| l.trim_end())
        .collect::<Vec<_>>()
        .join("\n");
    code.truncate(code.trim_end().len());
    let code = code.trim_start_matches('\n').to_string() + "\n";
    GeneratedCode { code, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest() -> Vec<String> {
        vec!["REST".to_string()]
    }

    const MOVE_FORWARD_SPEC: &str = r#"{
  "skill_name": "move_forward",
  "interface_type": "REST",
  "target_language": "Python",
  "framework": "ROS 2",
  "states": {
    "execute": "Set the velocity of the robot to a calculated value for the desired time only and then reset it. If the calculated velocity exceeds the maximum velocity, set the maximum velocity and calculate the new time necessary to travel the desired distance."
  }
}"#;

    #[test]
    fn move_forward_spec_parses() {
        let s = parse_skill_spec(MOVE_FORWARD_SPEC, &rest()).unwrap();
        assert_eq!(s.skill_name, "move_forward");
        assert!(s.state_behaviors[&StateName::Execute].starts_with("Set the velocity of the robot"));
        assert_eq!(s.description, None);
    }

    #[test]
    fn holding_only_is_missing_execute() {
        let doc = r#"{"skill_name":"s","interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Holding":"pause"}}"#;
        assert_eq!(parse_skill_spec(doc, &rest()), Err(SkillSpecError::MissingExecuteBehavior));
        let blank = r#"{"skill_name":"s","interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Execute":"  "}}"#;
        assert_eq!(parse_skill_spec(blank, &rest()), Err(SkillSpecError::MissingExecuteBehavior));
    }

    #[test]
    fn unknown_state_lists_allowed() {
        let doc = r#"{"skill_name":"s","interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Execute":"go","running":"x"}}"#;
        match parse_skill_spec(doc, &rest()) {
            Err(SkillSpecError::UnknownState { name, allowed }) => {
                assert_eq!(name, "running");
                assert_eq!(allowed.len(), 11);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsupported_interface_type() {
        let doc = MOVE_FORWARD_SPEC.replace("\"REST\"", "\"OPC UA\"");
        assert!(matches!(
            parse_skill_spec(&doc, &rest()),
            Err(SkillSpecError::UnsupportedInterfaceType { .. })
        ));
        assert!(parse_skill_spec(&doc, &["REST".into(), "OPC UA".into()]).is_ok());
    }

    #[test]
    fn schema_violations() {
        for doc in [
            "[]",
            r#"{"interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Execute":"go"}}"#,
            r#"{"skill_name":"9lives","interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Execute":"go"}}"#,
            r#"{"skill_name":"s","interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Execute":"go"},"extra":1}"#,
            r#"{"skill_name":"s","interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Execute":"go","EXECUTE":"again"}}"#,
            r#"{"skill_name":"s","interface_type":"REST","target_language":"Python","framework":"ROS 2","states":{"Execute":"go","Holding":""}}"#,
        ] {
            assert!(matches!(parse_skill_spec(doc, &rest()), Err(SkillSpecError::Schema(_))), "{doc}");
        }
    }

    #[test]
    fn states_are_case_insensitive() {
        assert_eq!("eXeCuTe".parse::<StateName>(), Ok(StateName::Execute));
        assert_eq!(StateName::Unsuspending.to_string(), "Unsuspending");
        assert!("running".parse::<StateName>().is_err());
    }

    #[test]
    fn spec_serialization_roundtrip() {
        let s = parse_skill_spec(MOVE_FORWARD_SPEC, &rest()).unwrap();
        let text = serialize_skill_spec(&s);
        assert!(text.contains("\"Execute\""));
        assert_eq!(parse_skill_spec(&text, &rest()).unwrap(), s);
        assert_eq!(serialize_skill_spec(&parse_skill_spec(&text, &rest()).unwrap()), text);
    }

    #[test]
    fn extraction_rules() {
        let one = extract_code("Here you go:\n```python\nprint('x')   \n```\nDone.");
        assert_eq!(one.code, "print('x')\n");
        assert!(one.warnings.is_empty());

        let prose = extract_code("just text\n");
        assert_eq!(prose.code, "just text\n");
        assert_eq!(prose.warnings.len(), 1);

        let many = extract_code("```\na\n```\n```py\nlonger\nbody\n```\n```\nb\n```");
        assert_eq!(many.code, "longer\nbody\n");
        assert!(many.warnings[0].contains("3 code blocks"));
    }
}
