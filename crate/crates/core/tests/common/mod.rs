//! Seeded random generators and fixture helpers shared by the integration
//! tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use cap2skill::apidoc::{InterfaceCatalog, InterfaceKind, ParameterField, ResourceInterface};
use cap2skill::index::{Vector, VectorIndex};
use cap2skill::prompt::{SkillSpecification, StateName};
use cap2skill::verifier::{AnnotationOutcomes, ItemOutcome, Outcome, Overall, Status, UsageReport, VerificationReport};
use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

const PIECES: &[&str] = &[
    "a", "Z", "0", "_", " ", "\"", "\\", "\n", "\t", "ä", "→", "🤖", "{", "}", "#", "'", "end", "vel", "/", ":",
];

pub fn text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

pub fn nonblank(rng: &mut ChaCha8Rng, max: usize) -> String {
    format!("x{}", text(rng, max))
}

pub fn ident(rng: &mut ChaCha8Rng) -> String {
    const HEAD: &[u8] = b"abcdefghijklmnopqrstuvwxyz_";
    const TAIL: &[u8] = b"abcdefghijklmnopqrstuvwxyz_0123456789";
    let mut s = String::new();
    s.push(*HEAD.choose(rng).unwrap() as char);
    for _ in 0..rng.gen_range(0..10) {
        s.push(*TAIL.choose(rng).unwrap() as char);
    }
    s
}

fn field(rng: &mut ChaCha8Rng, depth: usize) -> ParameterField {
    let name = ident(rng);
    if depth == 0 || rng.gen_bool(0.6) {
        let t = ["float64", "int32", "string", "bool", "float32[]"].choose(rng).unwrap();
        ParameterField::leaf(&name, t)
    } else {
        ParameterField::composite(&name, &format!("pkg/msg/{}", ident(rng)), fields(rng, depth - 1))
    }
}

fn fields(rng: &mut ChaCha8Rng, depth: usize) -> Vec<ParameterField> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..rng.gen_range(0..4) {
        let f = field(rng, depth);
        if seen.insert(f.name.clone()) {
            out.push(f);
        }
    }
    out
}

fn json_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => json!(rng.gen_range(-1000i64..1000)),
        1 => json!(text(rng, 6)),
        2 => json!(rng.gen_bool(0.5)),
        3 => json!([rng.gen_range(0u32..10), text(rng, 3)]),
        _ => json!({ "depth": rng.gen_range(1u32..100), "reliability": "reliable" }),
    }
}

fn timestamp(rng: &mut ChaCha8Rng) -> DateTime<Utc> {
    let secs = rng.gen_range(946_684_800i64..1_900_000_000);
    let nanos = match rng.gen_range(0..3) {
        0 => 0,
        1 => rng.gen_range(0..1000) * 1_000_000,
        _ => rng.gen_range(0..1_000_000_000),
    };
    Utc.timestamp_opt(secs, nanos).unwrap()
}

/// A valid catalog with unique interface ids, nested parameters and
/// extension data at both levels.
pub fn catalog(rng: &mut ChaCha8Rng) -> InterfaceCatalog {
    let mut interfaces = Vec::new();
    let mut ids = BTreeSet::new();
    for _ in 0..rng.gen_range(0..8) {
        let kind = *[InterfaceKind::Topic, InterfaceKind::Service, InterfaceKind::Action].choose(rng).unwrap();
        let name = format!("/{}/{}", ident(rng), ident(rng));
        let mut i = ResourceInterface::new(kind, &name, &format!("pkg/msg/{}", ident(rng)), fields(rng, 3));
        if rng.gen_bool(0.3) {
            let mut ext = Map::new();
            ext.insert(format!("x_{}", ident(rng)), json_value(rng));
            i.extensions = ext;
        }
        if ids.insert(i.id()) {
            interfaces.push(i);
        }
    }
    let mut c = InterfaceCatalog::new(&nonblank(rng, 8), timestamp(rng), interfaces).unwrap();
    if rng.gen_bool(0.3) {
        c.extensions.insert("probe_version".into(), json!(text(rng, 4)));
    }
    c
}

fn outcome(rng: &mut ChaCha8Rng) -> Outcome {
    let status = *[Status::Full, Status::Partial, Status::Fail].choose(rng).unwrap();
    Outcome { status, detail: if status == Status::Partial { nonblank(rng, 10) } else { text(rng, 10) } }
}

fn names(rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..rng.gen_range(0..4)).map(|_| ident(rng)).collect()
}

pub fn report(rng: &mut ChaCha8Rng) -> VerificationReport {
    let item = |rng: &mut ChaCha8Rng| ItemOutcome { outcome: outcome(rng), missing: names(rng) };
    VerificationReport {
        skill: ident(rng),
        syntax: outcome(rng),
        annotations: AnnotationOutcomes {
            skill: outcome(rng),
            parameters: item(rng),
            outputs: item(rng),
            states: item(rng),
        },
        interface_usage: UsageReport {
            retrieved_used: names(rng),
            retrieved_unused: names(rng),
            unretrieved_used: names(rng),
        },
        code_lines: rng.gen_range(0..500),
        executability: "not evaluated".into(),
        behavior: text(rng, 12),
        overall: *[Overall::Pass, Overall::Partial, Overall::Fail].choose(rng).unwrap(),
        findings: (0..rng.gen_range(0..3)).map(|_| text(rng, 12)).collect(),
    }
}

pub fn random_vector(rng: &mut ChaCha8Rng, dimension: usize) -> Vector {
    loop {
        let comps: Vec<f64> = (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if comps.iter().any(|c| *c != 0.0) {
            return Vector::new(comps).unwrap();
        }
    }
}

/// Gaussian components via Box-Muller.
pub fn gaussian_vector(rng: &mut ChaCha8Rng, dimension: usize) -> Vector {
    let comps: Vec<f64> = (0..dimension)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Vector::new(comps).unwrap()
}

pub fn index(rng: &mut ChaCha8Rng) -> VectorIndex {
    let mut index = VectorIndex::new(nonblank(rng, 6));
    let dimension = rng.gen_range(1..16);
    for n in 0..rng.gen_range(0..20) {
        let id = format!("{}:{n}", text(rng, 5));
        index.insert(&id, &text(rng, 20), &random_vector(rng, dimension)).unwrap();
    }
    index.freeze();
    index
}

pub const SUPPORTED: [&str; 2] = ["REST", "OPCUA"];

pub fn supported() -> Vec<String> {
    SUPPORTED.iter().map(|s| s.to_string()).collect()
}

pub fn skill_spec(rng: &mut ChaCha8Rng) -> SkillSpecification {
    let mut state_behaviors = BTreeMap::new();
    state_behaviors.insert(StateName::Execute, nonblank(rng, 20));
    for state in StateName::ALL {
        if rng.gen_bool(0.3) {
            state_behaviors.insert(state, nonblank(rng, 20));
        }
    }
    SkillSpecification {
        skill_name: ident(rng),
        interface_type: SUPPORTED.choose(rng).unwrap().to_string(),
        description: rng.gen_bool(0.5).then(|| text(rng, 15)),
        state_behaviors,
        target_language: nonblank(rng, 5),
        framework: nonblank(rng, 5),
    }
}

pub fn mmo700() -> PathBuf {
    fixtures().join("mmo700")
}

pub fn read(path: impl AsRef<std::path::Path>) -> String {
    let path = path.as_ref();
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn mmo700_capability(name: &str) -> cap2skill::CapabilityModel {
    let text = read(mmo700().join("capabilities").join(format!("{name}.ttl")));
    let models = cap2skill::capability::parse_capability_document(&text, &Default::default()).unwrap();
    assert_eq!(models.len(), 1);
    models.into_iter().next().unwrap()
}

pub fn mmo700_spec(name: &str) -> SkillSpecification {
    let text = read(mmo700().join("specs").join(format!("{name}.skillspec.json")));
    cap2skill::prompt::parse_skill_spec(&text, &["REST".to_string()]).unwrap()
}

/// Fixture config pointed at a fresh workspace.
pub fn fixture_config(fixture: &str, workspace: &std::path::Path) -> cap2skill::PipelineConfig {
    let mut c = cap2skill::PipelineConfig::load(&fixtures().join(fixture).join("config.json")).unwrap();
    c.workspace = Some(workspace.to_path_buf());
    c
}

/// `(capability, spec, catalog)` input paths of the move-forward run.
pub fn move_forward_inputs() -> (PathBuf, PathBuf, PathBuf) {
    let root = mmo700();
    (
        root.join("capabilities/move_forward.ttl"),
        root.join("specs/move_forward.skillspec.json"),
        root.join("apidoc.json"),
    )
}
