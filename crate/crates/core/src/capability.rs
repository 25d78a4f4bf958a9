//! Capability ontology ingestion.
//!
//! A capability individual is any subject typed with one of the configured
//! capability classes. Its `rdfs:comment` is the retrieval query; the whole
//! source document is carried along verbatim for the generation prompt.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::turtle::{self, Literal, SyntaxError, Term, Triple, RDF_TYPE};

pub const RDFS_COMMENT: &str = "http://www.w3.org/2000/01/rdf-schema#comment";
pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
const OWL_NAMED_INDIVIDUAL: &str = "http://www.w3.org/2002/07/owl#NamedIndividual";

/// IRIs that identify capabilities and their input/output links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Vocabulary {
    pub capability_classes: Vec<String>,
    pub input_properties: Vec<String>,
    pub output_properties: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let css = "http://www.w3id.org/hsu-aut/css#";
        let cask = "http://www.w3id.org/hsu-aut/cask#";
        let vdi = "http://www.w3id.org/hsu-aut/VDI3682#";
        Self {
            capability_classes: vec![
                format!("{css}Capability"),
                format!("{cask}Capability"),
                format!("{cask}ProvidedCapability"),
                format!("{cask}RequiredCapability"),
            ],
            input_properties: vec![format!("{vdi}hasInput"), format!("{cask}hasInput")],
            output_properties: vec![format!("{vdi}hasOutput"), format!("{cask}hasOutput")],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub iri: String,
    pub name: String,
    pub direction: Direction,
    pub datatype_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityModel {
    pub iri: String,
    pub label: Option<String>,
    pub comment: String,
    pub inputs: Vec<PropertySpec>,
    pub outputs: Vec<PropertySpec>,
    pub raw_text: String,
}

impl CapabilityModel {
    /// Local part of the capability IRI, used to name workspace artifacts.
    pub fn local_name(&self) -> &str {
        local_name(&self.iri)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CapabilityError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("capability <{0}> has no rdfs:comment")]
    MissingComment(String),
    #[error("document contains no capability individual")]
    EmptyDocument,
    #[error("capability identifier {0:?} is not an absolute IRI")]
    InvalidIri(String),
    #[error("no capability with IRI <{0}>")]
    NotFound(String),
    #[error("{0} capabilities found; select one by IRI")]
    Ambiguous(usize),
}

/// Parses every capability individual from a Turtle document, in order of
/// first type assertion.
pub fn parse_capability_document(
    turtle_text: &str,
    vocab: &Vocabulary,
) -> Result<Vec<CapabilityModel>, CapabilityError> {
    let triples = turtle::parse_triples(turtle_text)?;
    let graph = Graph::new(&triples);

    let mut seen = HashSet::new();
    let mut subjects = Vec::new();
    for t in &triples {
        if t.predicate == RDF_TYPE
            && t.object
                .as_iri()
                .is_some_and(|c| vocab.capability_classes.iter().any(|k| k == c))
        {
            if let Some(id) = t.subject.node_id() {
                if seen.insert(id.clone()) {
                    subjects.push(id);
                }
            }
        }
    }
    if subjects.is_empty() {
        return Err(CapabilityError::EmptyDocument);
    }

    subjects
        .into_iter()
        .map(|id| {
            if !turtle::has_scheme(&id) {
                return Err(CapabilityError::InvalidIri(id));
            }
            let comment = graph
                .preferred_literal(&id, RDFS_COMMENT)
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .ok_or_else(|| CapabilityError::MissingComment(id.clone()))?;
            let label = graph.preferred_literal(&id, RDFS_LABEL);
            let inputs = graph.properties(&id, &vocab.input_properties, Direction::Input);
            let outputs = graph.properties(&id, &vocab.output_properties, Direction::Output);
            Ok(CapabilityModel {
                iri: id,
                label,
                comment,
                inputs,
                outputs,
                raw_text: turtle_text.to_string(),
            })
        })
        .collect()
}

/// The natural-language query used to retrieve interfaces for `cap`.
pub fn retrieval_query(cap: &CapabilityModel) -> String {
    cap.comment.trim().to_string()
}

pub fn select_capability<'a>(
    models: &'a [CapabilityModel],
    iri: Option<&str>,
) -> Result<&'a CapabilityModel, CapabilityError> {
    match iri {
        Some(iri) => models
            .iter()
            .find(|m| m.iri == iri)
            .ok_or_else(|| CapabilityError::NotFound(iri.to_string())),
        None => match models {
            [only] => Ok(only),
            [] => Err(CapabilityError::EmptyDocument),
            many => Err(CapabilityError::Ambiguous(many.len())),
        },
    }
}

pub fn local_name(iri: &str) -> &str {
    let tail = iri.rsplit(['#', '/']).next().unwrap_or(iri);
    if tail.is_empty() {
        iri
    } else {
        tail.trim_start_matches("_:")
    }
}

struct Graph<'a> {
    by_subject: HashMap<String, Vec<&'a Triple>>,
}

impl<'a> Graph<'a> {
    fn new(triples: &'a [Triple]) -> Self {
        let mut by_subject: HashMap<String, Vec<&Triple>> = HashMap::new();
        for t in triples {
            if let Some(id) = t.subject.node_id() {
                by_subject.entry(id).or_default().push(t);
            }
        }
        Self { by_subject }
    }

    fn objects(&self, subject: &str, predicate: &str) -> impl Iterator<Item = &'a Term> + '_ {
        let predicate = predicate.to_string();
        self.by_subject
            .get(subject)
            .into_iter()
            .flatten()
            .filter(move |t| t.predicate == predicate)
            .map(|t| &t.object)
    }

    /// English-tagged literal first, otherwise the first one in document order.
    fn preferred_literal(&self, subject: &str, predicate: &str) -> Option<String> {
        let literals: Vec<&Literal> = self
            .objects(subject, predicate)
            .filter_map(|o| match o {
                Term::Literal(l) => Some(l),
                _ => None,
            })
            .collect();
        literals
            .iter()
            .find(|l| l.lang.as_deref() == Some("en"))
            .or_else(|| literals.first())
            .map(|l| l.value.clone())
    }

    fn properties(&self, cap: &str, predicates: &[String], direction: Direction) -> Vec<PropertySpec> {
        let mut out: Vec<PropertySpec> = Vec::new();
        for t in self.by_subject.get(cap).into_iter().flatten() {
            if !predicates.contains(&t.predicate) {
                continue;
            }
            let Some(id) = t.object.node_id() else { continue };
            if out.iter().any(|p| p.iri == id) {
                continue;
            }
            let name = match &t.object {
                Term::Blank(_) => self
                    .preferred_literal(&id, RDFS_LABEL)
                    .unwrap_or_else(|| id.clone()),
                _ => local_name(&id).to_string(),
            };
            let datatype_hint = self
                .objects(&id, RDF_TYPE)
                .filter_map(Term::as_iri)
                .find(|c| *c != OWL_NAMED_INDIVIDUAL)
                .map(|c| local_name(c).to_string());
            out.push(PropertySpec {
                iri: id,
                name,
                direction,
                datatype_hint,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MOVE_FORWARD: &str = r#"@prefix rdfs: <http://www.w3.org/2000/01/rdf-schema#> .
@prefix owl: <http://www.w3.org/2002/07/owl#> .
@prefix cask: <http://www.w3id.org/hsu-aut/cask#> .
@prefix VDI3682: <http://www.w3id.org/hsu-aut/VDI3682#> .
@prefix ex: <http://example.org/robot#> .

ex:MoveForward a cask:ProvidedCapability, owl:NamedIndividual ;
    rdfs:label "Move Forward"@en ;
    rdfs:comment "Set robot's velocity based on desired distance and travel time"@en ;
    VDI3682:hasInput ex:dist_in, ex:time_in ;
    VDI3682:hasOutput ex:dist_out, ex:time_out, ex:vel_out .

ex:dist_in a VDI3682:Information, owl:NamedIndividual .
"#;

    fn parse(text: &str) -> Result<Vec<CapabilityModel>, CapabilityError> {
        parse_capability_document(text, &Vocabulary::default())
    }

    #[test]
    fn move_forward_comment_and_properties() {
        let models = parse(MOVE_FORWARD).unwrap();
        assert_eq!(models.len(), 1);
        let m = &models[0];
        assert_eq!(m.comment, "Set robot's velocity based on desired distance and travel time");
        assert_eq!(m.label.as_deref(), Some("Move Forward"));
        let names: Vec<_> = m.inputs.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["dist_in", "time_in"]);
        assert_eq!(m.outputs.len(), 3);
        assert_eq!(m.inputs[0].datatype_hint.as_deref(), Some("Information"));
        assert!(m.outputs.iter().all(|p| p.direction == Direction::Output));
        assert_eq!(m.raw_text, MOVE_FORWARD);
        assert_eq!(m.local_name(), "MoveForward");
    }

    #[test]
    fn two_capabilities_keep_document_order() {
        let doc = r#"@prefix rdfs: <http://www.w3.org/2000/01/rdf-schema#> .
@prefix css: <http://www.w3id.org/hsu-aut/css#> .
@prefix ex: <http://example.org/> .
ex:B a css:Capability ;
    rdfs:comment "second letter" .
ex:A a css:Capability ;
    rdfs:comment "first letter" .
ex:other a ex:Thing ;
    rdfs:comment "not a capability" .
"#;
        let models = parse(doc).unwrap();
        let iris: Vec<_> = models.iter().map(|m| m.iri.as_str()).collect();
        assert_eq!(iris, ["http://example.org/B", "http://example.org/A"]);
    }

    #[test]
    fn missing_comment_is_an_error() {
        let doc = "@prefix css: <http://www.w3id.org/hsu-aut/css#> .\n<http://e/x> a css:Capability .";
        assert!(matches!(parse(doc), Err(CapabilityError::MissingComment(iri)) if iri == "http://e/x"));
    }

    #[test]
    fn no_capability_is_empty_document() {
        assert!(matches!(
            parse("<http://e/x> a <http://e/Thing> ."),
            Err(CapabilityError::EmptyDocument)
        ));
    }

    #[test]
    fn syntax_errors_surface() {
        assert!(matches!(parse("<http://e/x> a ("), Err(CapabilityError::Syntax(_))));
    }

    #[test]
    fn english_comment_wins_then_document_order() {
        let doc = r#"@prefix rdfs: <http://www.w3.org/2000/01/rdf-schema#> .
<http://e/x> a <http://www.w3id.org/hsu-aut/css#Capability> ;
    rdfs:comment "Beschreibung"@de, "  x  ", "english text"@en, "more english"@en ."#;
        assert_eq!(parse(doc).unwrap()[0].comment, "english text");
        let doc2 = r#"<http://e/x> a <http://www.w3id.org/hsu-aut/css#Capability> ;
    <http://www.w3.org/2000/01/rdf-schema#comment> "  x  ", "y" ."#;
        let m = &parse(doc2).unwrap()[0];
        assert_eq!(retrieval_query(m), "x");
    }

    #[test]
    fn blank_node_inputs_use_labels() {
        let doc = r#"@prefix rdfs: <http://www.w3.org/2000/01/rdf-schema#> .
@prefix cask: <http://www.w3id.org/hsu-aut/cask#> .
<http://e/c> a cask:Capability ; rdfs:comment "c" ;
    cask:hasInput [ rdfs:label "speed" ] ."#;
        let m = &parse(doc).unwrap()[0];
        assert_eq!(m.inputs[0].name, "speed");
        assert!(m.inputs[0].iri.starts_with("_:"));
    }

    #[test]
    fn relative_capability_iri_is_rejected() {
        let doc = "<x> a <http://www.w3id.org/hsu-aut/css#Capability> ; <http://www.w3.org/2000/01/rdf-schema#comment> \"c\" .";
        assert!(matches!(parse(doc), Err(CapabilityError::InvalidIri(_))));
    }

    #[test]
    fn custom_vocabulary() {
        let vocab = Vocabulary {
            capability_classes: vec!["http://e/Cap".into()],
            input_properties: vec!["http://e/in".into()],
            output_properties: vec![],
        };
        let doc = r#"<http://e/c> a <http://e/Cap> ; <http://www.w3.org/2000/01/rdf-schema#comment> "c" ; <http://e/in> <http://e/p> ."#;
        let m = &parse_capability_document(doc, &vocab).unwrap()[0];
        assert_eq!(m.inputs.len(), 1);
    }

    #[test]
    fn selection_rules() {
        let m1 = parse(MOVE_FORWARD).unwrap().remove(0);
        let mut m2 = m1.clone();
        m2.iri = "http://example.org/robot#Other".into();
        assert_eq!(select_capability(std::slice::from_ref(&m1), None).unwrap(), &m1);
        let both = [m1.clone(), m2.clone()];
        assert_eq!(select_capability(&both, Some(&m2.iri)).unwrap(), &m2);
        assert!(matches!(select_capability(&both, None), Err(CapabilityError::Ambiguous(2))));
        assert!(matches!(
            select_capability(&both, Some("http://nope")),
            Err(CapabilityError::NotFound(_))
        ));
    }

    #[test]
    fn raw_text_reparses_to_equal_model() {
        let models = parse(MOVE_FORWARD).unwrap();
        let again = parse(&models[0].raw_text).unwrap();
        assert!(again.contains(&models[0]));
    }

    #[test]
    fn local_names() {
        assert_eq!(local_name("http://e.org/a#b"), "b");
        assert_eq!(local_name("http://e.org/a/b"), "b");
        assert_eq!(local_name("_:b_x"), "b_x");
    }
}
