//! LLM enrichment of catalog entries: uniform descriptions (the retrieval
//! chunks) and the control-relevance classification.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::apidoc::{full_documentation_text, InterfaceCatalog, ResourceInterface};
use crate::gateway::{ChatMessage, Gateway, GatewayError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceDescription {
    pub interface_id: String,
    pub module_context: String,
    pub task_relevance: String,
    pub typical_entities: String,
    pub combined_text: String,
}

impl InterfaceDescription {
    pub fn new(interface_id: &str, module: &str, tasks: &str, users: &str) -> Self {
        Self {
            interface_id: interface_id.to_string(),
            module_context: module.to_string(),
            task_relevance: tasks.to_string(),
            typical_entities: users.to_string(),
            combined_text: format!("Module: {module}\nTasks: {tasks}\nUsers: {users}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceVerdict {
    pub interface_id: String,
    pub relevant: bool,
    pub rationale: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EnrichmentError {
    #[error("description for {0} is missing a labeled section after retry")]
    MalformedDescription(String),
    #[error("relevance verdict for {0} does not end with RELEVANT or IRRELEVANT")]
    UnparseableVerdict(String),
    #[error("no relevance verdict for {0}")]
    MissingVerdict(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

const DESCRIBE_INSTRUCTIONS: &str = "\
You document the control interfaces of a robot or machine for a retrieval system.
Given the full documentation of one interface, write a compact, uniformly structured
description with exactly these three labeled lines and nothing else:
Module: the resource module or subsystem the interface belongs to.
Tasks: the kinds of tasks for which the interface is relevant.
Users: the typical entities (nodes, controllers, operators) that use or interact with it.
Keep each line to one or two sentences.";

const DESCRIBE_REINFORCEMENT: &str = "\
Your answer is missing at least one required line. Answer again with exactly three lines
starting with \"Module:\", \"Tasks:\" and \"Users:\".";

const RELEVANCE_INSTRUCTIONS: &str = "\
Decide whether a resource interface is involved in controlling the resource.
An interface is IRRELEVANT if it is used exclusively for debugging, logging,
introspection or metadata exchange.
An interface is RELEVANT if it actively participates in control processes, receives
control-related messages, or is part of a known control mechanism.
Give a one-sentence rationale, then end your answer with the single word RELEVANT or IRRELEVANT.";

fn interface_message(i: &ResourceInterface) -> String {
    format!("Interface id: {}\n\n{}", i.id(), full_documentation_text(i))
}

/// Asks for the three-section description, retrying once with a reminder if
/// a section is missing.
pub fn describe_interface(i: &ResourceInterface, gateway: &Gateway) -> Result<InterfaceDescription, EnrichmentError> {
    let mut messages = vec![
        ChatMessage::system(DESCRIBE_INSTRUCTIONS),
        ChatMessage::user(interface_message(i)),
    ];
    let first = gateway.chat(&gateway.chat_request(messages.clone()))?;
    if let Some((m, t, u)) = parse_sections(&first) {
        return Ok(InterfaceDescription::new(&i.id(), &m, &t, &u));
    }
    tracing::debug!(id = %i.id(), "description incomplete, retrying");
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(DESCRIBE_REINFORCEMENT));
    let second = gateway.chat(&gateway.chat_request(messages))?;
    parse_sections(&second)
        .map(|(m, t, u)| InterfaceDescription::new(&i.id(), &m, &t, &u))
        .ok_or_else(|| EnrichmentError::MalformedDescription(i.id()))
}

/// Extracts the `Module:`, `Tasks:` and `Users:` sections. Labels may be
/// wrapped in markdown emphasis or list markers; a section runs until the
/// next label.
pub fn parse_sections(text: &str) -> Option<(String, String, String)> {
    const LABELS: [&str; 3] = ["module", "tasks", "users"];
    let mut found: [Option<Vec<String>>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let stripped = line.trim().trim_start_matches(['-', '*', '#', ' ']);
        let label = stripped.split_once(':').and_then(|(head, rest)| {
            let head = head.trim().trim_matches('*').trim().to_ascii_lowercase();
            LABELS
                .iter()
                .position(|l| *l == head)
                .map(|n| (n, rest.trim_start_matches('*').trim()))
        });
        match label {
            Some((n, rest)) if found[n].is_none() => {
                found[n] = Some(if rest.is_empty() { vec![] } else { vec![rest.to_string()] });
                current = Some(n);
            }
            Some(_) => current = None,
            None => {
                if let (Some(n), false) = (current, line.trim().is_empty()) {
                    if let Some(parts) = found[n].as_mut() {
                        parts.push(line.trim().to_string());
                    }
                }
            }
        }
    }
    let [m, t, u] = found.map(|p| p.map(|v| v.join(" ")).filter(|s| !s.is_empty()));
    Some((m?, t?, u?))
}

pub fn assess_relevance(i: &ResourceInterface, gateway: &Gateway) -> Result<RelevanceVerdict, EnrichmentError> {
    let completion = gateway.chat(&gateway.chat_request(vec![
        ChatMessage::system(RELEVANCE_INSTRUCTIONS),
        ChatMessage::user(interface_message(i)),
    ]))?;
    parse_verdict(&i.id(), &completion)
}

pub fn parse_verdict(interface_id: &str, completion: &str) -> Result<RelevanceVerdict, EnrichmentError> {
    let body = completion.trim_end().trim_end_matches(['.', '*', '`', '!']);
    let (rest, token) = match body.rsplit_once(char::is_whitespace) {
        Some((rest, token)) => (rest, token),
        None => ("", body),
    };
    let relevant = match token.trim_start_matches(['*', '`', '_']) {
        "RELEVANT" => true,
        "IRRELEVANT" => false,
        _ => return Err(EnrichmentError::UnparseableVerdict(interface_id.to_string())),
    };
    let rationale = rest.trim().trim_end_matches([':', '-', '*']).trim();
    Ok(RelevanceVerdict {
        interface_id: interface_id.to_string(),
        relevant,
        rationale: if rationale.is_empty() {
            "(no rationale given)".to_string()
        } else {
            rationale.to_string()
        },
    })
}

/// Runs `f` over every interface with at most `parallelism` calls in flight;
/// results come back in catalog order. The first error in catalog order wins.
fn for_each_interface<T, F>(catalog: &InterfaceCatalog, parallelism: usize, f: F) -> Result<Vec<T>, EnrichmentError>
where
    T: Send,
    F: Fn(&ResourceInterface) -> Result<T, EnrichmentError> + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<T, EnrichmentError>> =
        pool.install(|| catalog.interfaces.par_iter().map(&f).collect());
    results.into_iter().collect()
}

pub fn describe_all(catalog: &InterfaceCatalog, gateway: &Gateway) -> Result<Vec<InterfaceDescription>, EnrichmentError> {
    for_each_interface(catalog, gateway.config().max_in_flight, |i| describe_interface(i, gateway))
}

pub fn assess_all(catalog: &InterfaceCatalog, gateway: &Gateway) -> Result<Vec<RelevanceVerdict>, EnrichmentError> {
    for_each_interface(catalog, gateway.config().max_in_flight, |i| assess_relevance(i, gateway))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub catalog: InterfaceCatalog,
    pub excluded: Vec<String>,
}

/// Restricts the catalog to interfaces judged relevant. `None` (relevance
/// check disabled) keeps everything.
pub fn filter_catalog(
    catalog: &InterfaceCatalog,
    verdicts: Option<&[RelevanceVerdict]>,
) -> Result<FilterOutcome, EnrichmentError> {
    let Some(verdicts) = verdicts else {
        return Ok(FilterOutcome { catalog: catalog.clone(), excluded: Vec::new() });
    };
    let by_id: HashMap<&str, &RelevanceVerdict> =
        verdicts.iter().map(|v| (v.interface_id.as_str(), v)).collect();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for i in &catalog.interfaces {
        let id = i.id();
        match by_id.get(id.as_str()) {
            Some(v) if v.relevant => {
                let mut i = i.clone();
                i.relevant = Some(true);
                kept.push(i);
            }
            Some(_) => excluded.push(id),
            None => return Err(EnrichmentError::MissingVerdict(id)),
        }
    }
    let mut filtered = catalog.clone();
    filtered.interfaces = kept;
    Ok(FilterOutcome { catalog: filtered, excluded })
}

/// Keeps only descriptions whose interface survives in `catalog`, in
/// catalog order.
pub fn descriptions_for(catalog: &InterfaceCatalog, descriptions: &[InterfaceDescription]) -> Vec<InterfaceDescription> {
    let ids: HashSet<String> = catalog.interfaces.iter().map(|i| i.id()).collect();
    let mut out: Vec<InterfaceDescription> =
        descriptions.iter().filter(|d| ids.contains(&d.interface_id)).cloned().collect();
    out.sort_by(|a, b| a.interface_id.cmp(&b.interface_id));
    out
}

/// Canonical JSON array sorted by interface id.
pub fn serialize_sorted<T: Serialize + Clone>(items: &[T], id: impl Fn(&T) -> &str) -> String {
    let mut sorted: Vec<&T> = items.iter().collect();
    sorted.sort_by(|a, b| id(a).cmp(id(b)));
    let mut text = serde_json::to_string_pretty(&sorted).expect("serializes");
    text.push('\n');
    text
}
