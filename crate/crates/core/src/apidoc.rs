//! Resource-interface catalog: the structured API document listing every
//! topic, service and action of a resource with its message definition.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::enrichment::InterfaceDescription;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceKind {
    Topic,
    Service,
    Action,
}

impl InterfaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InterfaceKind::Topic => "topic",
            InterfaceKind::Service => "service",
            InterfaceKind::Action => "action",
        }
    }
}

impl fmt::Display for InterfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterfaceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "topic" => Ok(InterfaceKind::Topic),
            "service" => Ok(InterfaceKind::Service),
            "action" => Ok(InterfaceKind::Action),
            other => Err(format!("unknown interface kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterField {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
    pub children: Vec<ParameterField>,
}

impl ParameterField {
    pub fn leaf(name: &str, type_name: &str) -> Self {
        Self {
            name: name.to_string(),
            type_name: type_name.to_string(),
            children: Vec::new(),
        }
    }

    pub fn composite(name: &str, type_name: &str, children: Vec<ParameterField>) -> Self {
        Self {
            name: name.to_string(),
            type_name: type_name.to_string(),
            children,
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ParameterField::depth).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        if self.children.is_empty() {
            1
        } else {
            self.children.iter().map(ParameterField::leaf_count).sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceInterface {
    pub name: String,
    pub kind: InterfaceKind,
    pub message_type: String,
    pub parameters: Vec<ParameterField>,
    /// Filled by enrichment; not part of the catalog wire format.
    pub description: Option<InterfaceDescription>,
    /// Filled by the relevance check; not part of the catalog wire format.
    pub relevant: Option<bool>,
    pub extensions: Map<String, Value>,
}

impl ResourceInterface {
    pub fn new(kind: InterfaceKind, name: &str, message_type: &str, parameters: Vec<ParameterField>) -> Self {
        Self {
            name: name.to_string(),
            kind,
            message_type: message_type.to_string(),
            parameters,
            description: None,
            relevant: None,
            extensions: Map::new(),
        }
    }

    pub fn id(&self) -> String {
        interface_id(self)
    }

    /// Last path component of the interface name (`/a/b/cmd_vel` → `cmd_vel`).
    pub fn short_name(&self) -> &str {
        self.name
            .rsplit('/')
            .find(|s| !s.is_empty())
            .unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceCatalog {
    pub resource_name: String,
    pub generated_at: DateTime<Utc>,
    pub interfaces: Vec<ResourceInterface>,
    pub extensions: Map<String, Value>,
}

impl InterfaceCatalog {
    pub fn new(resource_name: &str, generated_at: DateTime<Utc>, mut interfaces: Vec<ResourceInterface>) -> Result<Self, ApiDocError> {
        interfaces.sort_by_key(interface_id);
        check_unique(&interfaces)?;
        Ok(Self {
            resource_name: resource_name.to_string(),
            generated_at,
            interfaces,
            extensions: Map::new(),
        })
    }

    pub fn get(&self, id: &str) -> Option<&ResourceInterface> {
        self.interfaces.iter().find(|i| i.id() == id)
    }

    pub fn len(&self) -> usize {
        self.interfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interfaces.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiDocError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("duplicate interface {0}")]
    DuplicateInterface(String),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ApiDocError {
    ApiDocError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

pub fn interface_id(i: &ResourceInterface) -> String {
    format!("{}:{}", i.kind, i.name)
}

fn check_unique(interfaces: &[ResourceInterface]) -> Result<(), ApiDocError> {
    let mut seen = HashSet::new();
    for i in interfaces {
        let id = i.id();
        if !seen.insert(id.clone()) {
            return Err(ApiDocError::DuplicateInterface(id));
        }
    }
    Ok(())
}

/// Non-fatal findings from parsing, e.g. dropped unknown parameter keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseWarnings(pub Vec<String>);

pub fn parse_api_doc(document_text: &str) -> Result<InterfaceCatalog, ApiDocError> {
    parse_api_doc_with_warnings(document_text).map(|(c, _)| c)
}

pub fn parse_api_doc_with_warnings(document_text: &str) -> Result<(InterfaceCatalog, ParseWarnings), ApiDocError> {
    let root: Value = serde_json::from_str(document_text).map_err(|e| schema("$", e.to_string()))?;
    let Value::Object(mut top) = root else {
        return Err(schema("$", "expected an object"));
    };
    let mut warnings = ParseWarnings::default();

    let resource_name = take_string(&mut top, "resource", "$")?;
    let stamp = take_string(&mut top, "generated_at", "$")?;
    let generated_at = DateTime::parse_from_rfc3339(&stamp)
        .map_err(|e| schema("$.generated_at", format!("not an RFC 3339 timestamp: {e}")))?
        .with_timezone(&Utc);
    let Some(Value::Array(entries)) = top.remove("interfaces") else {
        return Err(schema("$.interfaces", "expected an array"));
    };

    let mut interfaces = Vec::with_capacity(entries.len());
    for (n, entry) in entries.into_iter().enumerate() {
        let path = format!("$.interfaces[{n}]");
        let Value::Object(mut obj) = entry else {
            return Err(schema(path, "expected an object"));
        };
        let kind_text = take_string(&mut obj, "kind", &path)?;
        let kind = kind_text
            .parse()
            .map_err(|m: String| schema(format!("{path}.kind"), m))?;
        let name = take_string(&mut obj, "name", &path)?;
        if name.is_empty() {
            return Err(schema(format!("{path}.name"), "must not be empty"));
        }
        let message_type = take_string(&mut obj, "message_type", &path)?;
        let parameters = match obj.remove("parameters") {
            Some(v) => parse_fields(v, &format!("{path}.parameters"), &mut warnings)?,
            None => return Err(schema(format!("{path}.parameters"), "missing field")),
        };
        let mut extensions = match obj.remove("extensions") {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m,
            Some(_) => return Err(schema(format!("{path}.extensions"), "expected an object")),
        };
        // unknown keys are kept, not dropped
        extensions.extend(obj);
        interfaces.push(ResourceInterface {
            name,
            kind,
            message_type,
            parameters,
            description: None,
            relevant: None,
            extensions,
        });
    }

    let mut catalog = InterfaceCatalog::new(&resource_name, generated_at, interfaces)?;
    catalog.extensions = top;
    Ok((catalog, warnings))
}

fn take_string(obj: &mut Map<String, Value>, key: &str, path: &str) -> Result<String, ApiDocError> {
    match obj.remove(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(schema(format!("{path}.{key}"), "expected a string")),
        None => Err(schema(format!("{path}.{key}"), "missing field")),
    }
}

fn parse_fields(v: Value, path: &str, warnings: &mut ParseWarnings) -> Result<Vec<ParameterField>, ApiDocError> {
    let Value::Array(items) = v else {
        return Err(schema(path, "expected an array"));
    };
    let mut fields = Vec::with_capacity(items.len());
    let mut names = HashSet::new();
    for (n, item) in items.into_iter().enumerate() {
        let p = format!("{path}[{n}]");
        let Value::Object(mut obj) = item else {
            return Err(schema(p, "expected an object"));
        };
        let name = take_string(&mut obj, "name", &p)?;
        let type_name = take_string(&mut obj, "type", &p)?;
        let children = match obj.remove("children") {
            Some(v) => parse_fields(v, &format!("{p}.children"), warnings)?,
            None => Vec::new(),
        };
        for key in obj.keys() {
            warnings.0.push(format!("{p}: ignored unknown key {key:?}"));
        }
        if !names.insert(name.clone()) {
            return Err(schema(p, format!("duplicate sibling field {name:?}")));
        }
        fields.push(ParameterField {
            name,
            type_name,
            children,
        });
    }
    Ok(fields)
}

#[derive(Serialize)]
struct WireCatalog<'a> {
    resource: &'a str,
    generated_at: String,
    interfaces: Vec<WireInterface<'a>>,
    #[serde(flatten)]
    extensions: &'a Map<String, Value>,
}

#[derive(Serialize)]
struct WireInterface<'a> {
    kind: InterfaceKind,
    name: &'a str,
    message_type: &'a str,
    parameters: &'a [ParameterField],
    #[serde(skip_serializing_if = "Map::is_empty")]
    extensions: &'a Map<String, Value>,
}

/// Canonical, byte-deterministic catalog document.
pub fn serialize_api_doc(catalog: &InterfaceCatalog) -> String {
    let mut sorted: Vec<&ResourceInterface> = catalog.interfaces.iter().collect();
    sorted.sort_by_key(|i| i.id());
    let wire = WireCatalog {
        resource: &catalog.resource_name,
        generated_at: catalog.generated_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        interfaces: sorted
            .into_iter()
            .map(|i| WireInterface {
                kind: i.kind,
                name: &i.name,
                message_type: &i.message_type,
                parameters: &i.parameters,
                extensions: &i.extensions,
            })
            .collect(),
        extensions: &catalog.extensions,
    };
    let mut text = serde_json::to_string_pretty(&wire).expect("catalog serializes");
    text.push('\n');
    text
}

/// Human-readable rendering of one interface, used verbatim in prompts.
pub fn full_documentation_text(i: &ResourceInterface) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Interface: {}", i.name);
    let _ = writeln!(out, "Kind: {}", i.kind);
    let _ = writeln!(out, "Message type: {}", i.message_type);
    if !i.parameters.is_empty() {
        out.push_str("Parameters:\n");
        for f in &i.parameters {
            render_field(&mut out, f, 1);
        }
    }
    out
}

fn render_field(out: &mut String, f: &ParameterField, depth: usize) {
    let _ = writeln!(out, "{}- {}: {}", "  ".repeat(depth), f.name, f.type_name);
    for c in &f.children {
        render_field(out, c, depth + 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector3(name: &str) -> ParameterField {
        ParameterField::composite(
            name,
            "geometry_msgs/msg/Vector3",
            vec![
                ParameterField::leaf("x", "float64"),
                ParameterField::leaf("y", "float64"),
                ParameterField::leaf("z", "float64"),
            ],
        )
    }

    fn cmd_vel() -> ResourceInterface {
        ResourceInterface::new(
            InterfaceKind::Topic,
            "/cmd_vel",
            "geometry_msgs/msg/Twist",
            vec![vector3("linear"), vector3("angular")],
        )
    }

    const CMD_VEL_DOC: &str = r#"{
  "resource": "mmo700",
  "generated_at": "2025-03-01T10:00:00Z",
  "interfaces": [
    {"kind": "topic", "name": "/cmd_vel", "message_type": "geometry_msgs/msg/Twist",
     "parameters": [
       {"name": "linear", "type": "geometry_msgs/msg/Vector3", "children": [
          {"name": "x", "type": "float64", "children": []},
          {"name": "y", "type": "float64", "children": []},
          {"name": "z", "type": "float64", "children": []}]},
       {"name": "angular", "type": "geometry_msgs/msg/Vector3", "children": [
          {"name": "x", "type": "float64", "children": []},
          {"name": "y", "type": "float64", "children": []},
          {"name": "z", "type": "float64", "children": []}]}
     ]}
  ]
}"#;

    #[test]
    fn parses_cmd_vel_fixture() {
        let c = parse_api_doc(CMD_VEL_DOC).unwrap();
        assert_eq!(c.len(), 1);
        let i = &c.interfaces[0];
        assert_eq!(i.id(), "topic:/cmd_vel");
        // linear/angular then x/y/z: depth 2, 6 leaves
        assert_eq!(i.parameters.iter().map(ParameterField::depth).max(), Some(2));
        assert_eq!(i.parameters.iter().map(ParameterField::leaf_count).sum::<usize>(), 6);
        assert_eq!(i, &cmd_vel());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let doc = r#"{"resource":"r","generated_at":"2025-01-01T00:00:00Z","interfaces":[
            {"kind":"topic","name":"/odom","message_type":"nav_msgs/msg/Odometry","parameters":[]},
            {"kind":"topic","name":"/odom","message_type":"nav_msgs/msg/Odometry","parameters":[]}]}"#;
        assert_eq!(
            parse_api_doc(doc).unwrap_err(),
            ApiDocError::DuplicateInterface("topic:/odom".into())
        );
    }

    #[test]
    fn same_name_different_kind_is_fine() {
        let doc = r#"{"resource":"r","generated_at":"2025-01-01T00:00:00Z","interfaces":[
            {"kind":"topic","name":"/x","message_type":"a","parameters":[]},
            {"kind":"service","name":"/x","message_type":"b","parameters":[]}]}"#;
        assert_eq!(parse_api_doc(doc).unwrap().len(), 2);
    }

    #[test]
    fn schema_errors_carry_paths() {
        let cases = [
            (r#"[]"#, "$"),
            (r#"{"generated_at":"2025-01-01T00:00:00Z","interfaces":[]}"#, "$.resource"),
            (r#"{"resource":"r","generated_at":"yesterday","interfaces":[]}"#, "$.generated_at"),
            (r#"{"resource":"r","generated_at":"2025-01-01T00:00:00Z","interfaces":[{"kind":"pipe","name":"/a","message_type":"t","parameters":[]}]}"#, "$.interfaces[0].kind"),
            (r#"{"resource":"r","generated_at":"2025-01-01T00:00:00Z","interfaces":[{"kind":"topic","name":"/a","message_type":"t","parameters":[{"name":"x"}]}]}"#, "$.interfaces[0].parameters[0].type"),
            (r#"{"resource":"r","generated_at":"2025-01-01T00:00:00Z","interfaces":[{"kind":"topic","name":"/a","message_type":7,"parameters":[]}]}"#, "$.interfaces[0].message_type"),
        ];
        for (doc, want) in cases {
            match parse_api_doc(doc) {
                Err(ApiDocError::Schema { path, .. }) => assert_eq!(path, want, "{doc}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_keys_preserved_in_extensions() {
        let doc = r#"{"resource":"r","generated_at":"2025-01-01T00:00:00+02:00","probe":"v1","interfaces":[
            {"kind":"topic","name":"/a","message_type":"t","parameters":[],"qos":"reliable","extensions":{"node":"/base"}}]}"#;
        let c = parse_api_doc(doc).unwrap();
        assert_eq!(c.extensions.get("probe"), Some(&Value::from("v1")));
        let ext = &c.interfaces[0].extensions;
        assert_eq!(ext.get("qos"), Some(&Value::from("reliable")));
        assert_eq!(ext.get("node"), Some(&Value::from("/base")));
        let text = serialize_api_doc(&c);
        assert!(text.contains("\"generated_at\": \"2024-12-31T22:00:00Z\""));
        assert_eq!(parse_api_doc(&text).unwrap(), c);
    }

    #[test]
    fn unknown_parameter_keys_warn() {
        let doc = r#"{"resource":"r","generated_at":"2025-01-01T00:00:00Z","interfaces":[
            {"kind":"topic","name":"/a","message_type":"t","parameters":[{"name":"x","type":"int32","unit":"m"}]}]}"#;
        let (_, w) = parse_api_doc_with_warnings(doc).unwrap();
        assert_eq!(w.0.len(), 1);
        let (_, w) = parse_api_doc_with_warnings(CMD_VEL_DOC).unwrap();
        assert!(w.0.is_empty());
    }

    #[test]
    fn serialization_sorted_and_deterministic() {
        let catalog = InterfaceCatalog::new(
            "r",
            "2025-01-01T00:00:00Z".parse().unwrap(),
            vec![
                ResourceInterface::new(InterfaceKind::Topic, "/odom", "nav_msgs/msg/Odometry", vec![]),
                ResourceInterface::new(InterfaceKind::Action, "/navigate_to_pose", "nav2_msgs/action/NavigateToPose", vec![]),
                cmd_vel(),
            ],
        )
        .unwrap();
        let a = serialize_api_doc(&catalog);
        assert_eq!(a, serialize_api_doc(&catalog));
        let pos = |s: &str| a.find(s).unwrap();
        // by hand: action:/navigate_to_pose < topic:/cmd_vel < topic:/odom
        assert!(pos("/navigate_to_pose") < pos("/cmd_vel"));
        assert!(pos("/cmd_vel") < pos("\"/odom\""));
    }

    #[test]
    fn empty_catalog_document() {
        let c = InterfaceCatalog::new("r", "2025-01-01T00:00:00Z".parse().unwrap(), vec![]).unwrap();
        let text = serialize_api_doc(&c);
        assert_eq!(
            text,
            "{\n  \"resource\": \"r\",\n  \"generated_at\": \"2025-01-01T00:00:00Z\",\n  \"interfaces\": []\n}\n"
        );
    }

    #[test]
    fn ids() {
        let mk = |k, n: &str| ResourceInterface::new(k, n, "t", vec![]).id();
        assert_eq!(mk(InterfaceKind::Topic, "/odom"), "topic:/odom");
        assert_eq!(mk(InterfaceKind::Action, "/navigate_to_pose"), "action:/navigate_to_pose");
        assert_eq!(mk(InterfaceKind::Service, "/spawn"), "service:/spawn");
    }

    #[test]
    fn documentation_text() {
        let text = full_documentation_text(&cmd_vel());
        assert!(text.contains("Message type: geometry_msgs/msg/Twist\n"));
        // one line per leaf: 6 float64 leaves
        assert_eq!(text.lines().filter(|l| l.ends_with(": float64")).count(), 6);
        assert_eq!(text, full_documentation_text(&cmd_vel()));

        let bare = ResourceInterface::new(InterfaceKind::Service, "/spawn", "turtlesim/srv/Spawn", vec![]);
        assert_eq!(
            full_documentation_text(&bare),
            "Interface: /spawn\nKind: service\nMessage type: turtlesim/srv/Spawn\n"
        );
    }

    #[test]
    fn short_names() {
        let i = ResourceInterface::new(InterfaceKind::Action, "/arm/follow_joint_trajectory", "t", vec![]);
        assert_eq!(i.short_name(), "follow_joint_trajectory");
    }
}
