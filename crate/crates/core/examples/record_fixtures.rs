//! Regenerates the replay caches under `fixtures/` by running the pipeline in
//! record mode against the local stub provider.
//!
//! cargo run -p cap2skill --example record_fixtures

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cap2skill::apidoc::{serialize_api_doc, InterfaceCatalog, InterfaceKind, ParameterField, ResourceInterface};
use cap2skill::gateway::Mode;
use cap2skill::pipeline::Pipeline;
use cap2skill::PipelineConfig;
use cap2skill_stub::{ChatCall, StubConfig, StubServer};
use serde::Deserialize;

#[derive(Deserialize)]
struct Annotation {
    module: String,
    tasks: String,
    users: String,
    relevant: bool,
    rationale: String,
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn interface_id(call: &ChatCall) -> Option<&str> {
    let user = call.last_user();
    let rest = &user[user.find("Interface id: ")? + "Interface id: ".len()..];
    rest.lines().next()
}

fn skill_name(call: &ChatCall) -> Option<&str> {
    let user = call.last_user();
    let rest = &user[user.rfind("Skill name: ")? + "Skill name: ".len()..];
    rest.lines().next()
}

fn respond(
    call: &ChatCall,
    annotations: &BTreeMap<String, Annotation>,
    completions: &BTreeMap<String, String>,
) -> Option<String> {
    let system = call.system();
    if system.contains("Module:") {
        let a = annotations.get(interface_id(call)?)?;
        Some(format!("Module: {}\nTasks: {}\nUsers: {}", a.module, a.tasks, a.users))
    } else if system.contains("IRRELEVANT") {
        let a = annotations.get(interface_id(call)?)?;
        let verdict = if a.relevant { "RELEVANT" } else { "IRRELEVANT" };
        Some(format!("{}\n{verdict}", a.rationale))
    } else {
        completions.get(skill_name(call)?).cloned()
    }
}

fn start_stub(annotations: BTreeMap<String, Annotation>, completions: BTreeMap<String, String>) -> StubServer {
    StubServer::start(StubConfig {
        responder: Arc::new(move |call| respond(call, &annotations, &completions)),
        ..StubConfig::default()
    })
    .expect("stub starts")
}

fn record_config(dir: &Path, stub: &StubServer, workspace: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::load(&dir.join("config.json")).expect("fixture config");
    config.mode = Mode::Record;
    config.provider.base_url = stub.base_url().to_string();
    config.workspace = Some(workspace.to_path_buf());
    let cache = config.cache_dir.clone().expect("fixture config names a cache dir");
    if cache.exists() {
        fs::remove_dir_all(&cache).expect("clear old cache");
    }
    config
}

fn record_robot() {
    let dir = fixtures().join("mmo700");
    let annotations: BTreeMap<String, Annotation> =
        serde_json::from_str(&fs::read_to_string(dir.join("annotations.json")).unwrap()).unwrap();
    let mut completions = BTreeMap::new();
    for entry in fs::read_dir(dir.join("completions")).unwrap() {
        let path = entry.unwrap().path();
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        completions.insert(stem, fs::read_to_string(&path).unwrap());
    }
    let stub = start_stub(annotations, completions);
    let work = tempfile::tempdir().unwrap();
    let config = record_config(&dir, &stub, work.path());
    let pipeline = Pipeline::open(config).unwrap();
    let outcome = pipeline
        .run(
            &dir.join("capabilities/move_forward.ttl"),
            &dir.join("specs/move_forward.skillspec.json"),
            &dir.join("apidoc.json"),
        )
        .unwrap();
    println!(
        "mmo700: {} provider calls, hits {:?}, overall {:?}",
        stub.request_count(),
        outcome.retrieval.hit_ids(),
        outcome.report.overall
    );
}

const IRRELEVANT_KINDS: [&str; 6] = ["rosout", "diagnostics", "parameter_events", "introspection", "metadata", "debug_markers"];
const RELEVANT_KINDS: [(&str, InterfaceKind, &str); 13] = [
    ("cmd_vel", InterfaceKind::Topic, "geometry_msgs/msg/Twist"),
    ("odom", InterfaceKind::Topic, "nav_msgs/msg/Odometry"),
    ("scan", InterfaceKind::Topic, "sensor_msgs/msg/LaserScan"),
    ("joint_states", InterfaceKind::Topic, "sensor_msgs/msg/JointState"),
    ("joint_trajectory", InterfaceKind::Topic, "trajectory_msgs/msg/JointTrajectory"),
    ("imu", InterfaceKind::Topic, "sensor_msgs/msg/Imu"),
    ("map", InterfaceKind::Topic, "nav_msgs/msg/OccupancyGrid"),
    ("emergency_stop", InterfaceKind::Topic, "std_msgs/msg/Bool"),
    ("switch_controller", InterfaceKind::Service, "controller_manager_msgs/srv/SwitchController"),
    ("set_speed_limit", InterfaceKind::Service, "nav2_msgs/srv/SetSpeedLimit"),
    ("gripper_command", InterfaceKind::Action, "control_msgs/action/GripperCommand"),
    ("follow_joint_trajectory", InterfaceKind::Action, "control_msgs/action/FollowJointTrajectory"),
    ("navigate_to_pose", InterfaceKind::Action, "nav2_msgs/action/NavigateToPose"),
];

/// 10 units x 19 interface kinds; 6 of the kinds only carry logging,
/// diagnostics or metadata.
fn synthetic_catalog() -> (InterfaceCatalog, BTreeMap<String, Annotation>) {
    let mut interfaces = Vec::new();
    let mut annotations = BTreeMap::new();
    for unit in 0..10 {
        for (n, kind) in IRRELEVANT_KINDS.iter().enumerate() {
            let i = ResourceInterface::new(
                InterfaceKind::Topic,
                &format!("/unit_{unit:02}/{kind}"),
                "std_msgs/msg/String",
                vec![ParameterField::leaf("data", "string")],
            );
            annotations.insert(
                i.id(),
                Annotation {
                    module: format!("Monitoring of unit {unit}."),
                    tasks: format!("Publishing {} records for inspection (channel {n}).", kind.replace('_', " ")),
                    users: "Developers and monitoring tools.".into(),
                    relevant: false,
                    rationale: "The interface is used exclusively for logging, debugging or metadata.".into(),
                },
            );
            interfaces.push(i);
        }
        for (name, kind, message_type) in RELEVANT_KINDS {
            let i = ResourceInterface::new(
                kind,
                &format!("/unit_{unit:02}/{name}"),
                message_type,
                vec![ParameterField::leaf("value", "float64")],
            );
            annotations.insert(
                i.id(),
                Annotation {
                    module: format!("Control stack of unit {unit}."),
                    tasks: format!("Handling {} messages while controlling the unit.", name.replace('_', " ")),
                    users: "Controllers and skills of the unit.".into(),
                    relevant: true,
                    rationale: "The interface takes part in controlling the unit.".into(),
                },
            );
            interfaces.push(i);
        }
    }
    let stamp = chrono::DateTime::parse_from_rfc3339("2025-03-14T09:30:00Z").unwrap().with_timezone(&chrono::Utc);
    (InterfaceCatalog::new("synthetic fleet", stamp, interfaces).unwrap(), annotations)
}

fn record_synthetic() {
    let robot = fixtures().join("mmo700");
    let dir = fixtures().join("synthetic190");
    fs::create_dir_all(&dir).unwrap();
    let (catalog, annotations) = synthetic_catalog();
    fs::write(dir.join("apidoc.json"), serialize_api_doc(&catalog)).unwrap();
    let stub = start_stub(annotations, BTreeMap::new());
    let work = tempfile::tempdir().unwrap();
    let config = record_config(&dir, &stub, work.path());
    let pipeline = Pipeline::open(config).unwrap();
    pipeline
        .ingest(
            &robot.join("capabilities/move_forward.ttl"),
            &robot.join("specs/move_forward.skillspec.json"),
            &dir.join("apidoc.json"),
        )
        .unwrap();
    pipeline.describe().unwrap();
    let filter = pipeline.filter().unwrap();
    let index = pipeline.index().unwrap();
    println!(
        "synthetic190: {} provider calls, kept {}, excluded {}, corpus {}",
        stub.request_count(),
        filter.kept.len(),
        filter.excluded.len(),
        index.len()
    );
}

fn main() {
    record_robot();
    record_synthetic();
}
