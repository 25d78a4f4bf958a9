//! Stage orchestration over a workspace directory.
//!
//! Layout (all paths relative to the workspace root):
//!
//! ```text
//! inputs/capability.ttl         inputs/skill.skillspec.json
//! apidoc.json                   descriptions.json
//! relevance.json                filter.json
//! index.v1                      retrieval/<capability>.json
//! prompts/<skill>.txt           generated/<skill>.<ext>
//! reports/<skill>.report.json   runs/run-<timestamp>.json
//! cache/                        .lock  .failed
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apidoc::{parse_api_doc, parse_api_doc_with_warnings, serialize_api_doc, ApiDocError, InterfaceCatalog};
use crate::capability::{parse_capability_document, select_capability, CapabilityError, CapabilityModel};
use crate::config::{LanguageConfig, PipelineConfig};
use crate::enrichment::{
    assess_all, describe_all, descriptions_for, filter_catalog, serialize_sorted, EnrichmentError,
    InterfaceDescription, RelevanceVerdict,
};
use crate::gateway::{Gateway, GatewayError};
use crate::index::{IndexError, VectorIndex};
use crate::prompt::{
    build_prompt, generate_skill, load_few_shots, parse_skill_spec, FewShotError, GeneratedCode, PromptError,
    SkillSpecError, SkillSpecification,
};
use crate::retrieval::{build_corpus, retrieve_for_capability, RetrievalError, RetrievalResult};
use crate::verifier::{verify, Overall, VerificationReport, VerifyError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error(transparent)]
    ApiDoc(#[from] ApiDocError),
    #[error(transparent)]
    SkillSpec(#[from] SkillSpecError),
    #[error(transparent)]
    FewShot(#[from] FewShotError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Enrichment(#[from] EnrichmentError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("missing {path}; run the {stage} stage first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("workspace is locked by another run ({0}); remove the file if no run is active")]
    Locked(PathBuf),
    #[error("no workspace directory configured")]
    NoWorkspace,
    #[error("no language configuration for target language {0:?}")]
    UnknownLanguage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Writes via a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

/// Exclusive hold on a workspace; released on drop.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(root: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(PipelineError::Io { path, source: e }),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn capability_input(&self) -> PathBuf {
        self.root.join("inputs").join("capability.ttl")
    }

    pub fn spec_input(&self) -> PathBuf {
        self.root.join("inputs").join("skill.skillspec.json")
    }

    pub fn apidoc(&self) -> PathBuf {
        self.root.join("apidoc.json")
    }

    pub fn descriptions(&self) -> PathBuf {
        self.root.join("descriptions.json")
    }

    pub fn relevance(&self) -> PathBuf {
        self.root.join("relevance.json")
    }

    pub fn filter(&self) -> PathBuf {
        self.root.join("filter.json")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.v1")
    }

    pub fn retrieval(&self, capability_local_name: &str) -> PathBuf {
        self.root.join("retrieval").join(format!("{capability_local_name}.json"))
    }

    pub fn prompt(&self, skill: &str) -> PathBuf {
        self.root.join("prompts").join(format!("{skill}.txt"))
    }

    pub fn generated(&self, skill: &str, extension: &str) -> PathBuf {
        self.root.join("generated").join(format!("{skill}.{extension}"))
    }

    pub fn report(&self, skill: &str) -> PathBuf {
        self.root.join("reports").join(format!("{skill}.report.json"))
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn failed_marker(&self) -> PathBuf {
        self.root.join(".failed")
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }
}

/// Kept and excluded interface ids after relevance filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub relevance_check: bool,
    pub kept: Vec<String>,
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub capability_iri: String,
    pub skill_name: String,
    pub interfaces: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<String>,
}

/// Provenance of one end-to-end run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRunRecord {
    pub run_id: String,
    pub started_at: String,
    pub finished_at: String,
    pub mode: String,
    pub config_digest: String,
    /// SHA-256 of each input file.
    pub input_digests: Vec<(String, String)>,
    pub stages: Vec<StageRecord>,
    pub overall: Option<Overall>,
    pub error: Option<String>,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: VerificationReport,
    pub retrieval: RetrievalResult,
    pub generated: GeneratedCode,
    pub record: PipelineRunRecord,
    pub record_path: PathBuf,
}

pub struct Pipeline {
    config: PipelineConfig,
    workspace: Workspace,
    gateway: Gateway,
    _lock: WorkspaceLock,
}

impl Pipeline {
    /// Locks the workspace and builds the gateway. The workspace comes from
    /// the config.
    pub fn open(config: PipelineConfig) -> Result<Self, PipelineError> {
        let root = config.workspace.clone().ok_or(PipelineError::NoWorkspace)?;
        let workspace = Workspace::new(root);
        let lock = WorkspaceLock::acquire(workspace.root())?;
        let cache_dir = config.cache_dir.clone().unwrap_or_else(|| workspace.cache());
        let gateway = Gateway::new(config.provider.clone(), config.mode, cache_dir)?;
        Ok(Self { config, workspace, gateway, _lock: lock })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn read(&self, path: &Path, stage: &'static str) -> Result<String, PipelineError> {
        match fs::read_to_string(path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(PipelineError::MissingArtifact { path: path.to_path_buf(), stage })
            }
            Err(source) => Err(PipelineError::Io { path: path.to_path_buf(), source }),
        }
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, path: &Path, stage: &'static str) -> Result<T, PipelineError> {
        let text = self.read(path, stage)?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn capability(&self) -> Result<CapabilityModel, PipelineError> {
        let text = self.read(&self.workspace.capability_input(), "ingest")?;
        let models = parse_capability_document(&text, &self.config.vocabulary)?;
        Ok(select_capability(&models, self.config.capability_iri.as_deref())?.clone())
    }

    pub fn skill_spec(&self) -> Result<SkillSpecification, PipelineError> {
        let text = self.read(&self.workspace.spec_input(), "ingest")?;
        Ok(parse_skill_spec(&text, &self.config.supported_interface_types)?)
    }

    pub fn catalog(&self) -> Result<InterfaceCatalog, PipelineError> {
        Ok(parse_api_doc(&self.read(&self.workspace.apidoc(), "ingest")?)?)
    }

    /// The catalog restricted to the ids kept by the filter stage.
    pub fn filtered_catalog(&self) -> Result<InterfaceCatalog, PipelineError> {
        let mut catalog = self.catalog()?;
        let report: FilterReport = self.read_json(&self.workspace.filter(), "filter")?;
        let kept: std::collections::HashSet<&str> = report.kept.iter().map(String::as_str).collect();
        catalog.interfaces.retain(|i| kept.contains(i.id().as_str()));
        Ok(catalog)
    }

    fn language(&self, spec: &SkillSpecification) -> Result<&LanguageConfig, PipelineError> {
        self.config
            .language(&spec.target_language)
            .ok_or_else(|| PipelineError::UnknownLanguage(spec.target_language.clone()))
    }

    /// Validates the three inputs and copies them into the workspace.
    pub fn ingest(&self, capability: &Path, spec: &Path, catalog: &Path) -> Result<IngestSummary, PipelineError> {
        let cap_text = fs::read_to_string(capability).map_err(io_err(capability))?;
        let models = parse_capability_document(&cap_text, &self.config.vocabulary)?;
        let cap = select_capability(&models, self.config.capability_iri.as_deref())?;
        let spec_text = fs::read_to_string(spec).map_err(io_err(spec))?;
        let skill = parse_skill_spec(&spec_text, &self.config.supported_interface_types)?;
        let catalog_text = fs::read_to_string(catalog).map_err(io_err(catalog))?;
        let (parsed, warnings) = parse_api_doc_with_warnings(&catalog_text)?;
        for w in &warnings.0 {
            tracing::warn!("{w}");
        }
        write_atomic(&self.workspace.capability_input(), cap_text.as_bytes())?;
        write_atomic(&self.workspace.spec_input(), spec_text.as_bytes())?;
        write_atomic(&self.workspace.apidoc(), serialize_api_doc(&parsed).as_bytes())?;
        Ok(IngestSummary {
            capability_iri: cap.iri.clone(),
            skill_name: skill.skill_name,
            interfaces: parsed.len(),
            warnings: warnings.0,
        })
    }

    /// Describes every interface and, when enabled, classifies relevance.
    pub fn describe(&self) -> Result<(Vec<InterfaceDescription>, Option<Vec<RelevanceVerdict>>), PipelineError> {
        let catalog = self.catalog()?;
        let descriptions = describe_all(&catalog, &self.gateway)?;
        write_atomic(
            &self.workspace.descriptions(),
            serialize_sorted(&descriptions, |d| &d.interface_id).as_bytes(),
        )?;
        let verdicts = if self.config.relevance_check {
            let v = assess_all(&catalog, &self.gateway)?;
            write_atomic(&self.workspace.relevance(), serialize_sorted(&v, |v| &v.interface_id).as_bytes())?;
            Some(v)
        } else {
            None
        };
        Ok((descriptions, verdicts))
    }

    pub fn filter(&self) -> Result<FilterReport, PipelineError> {
        let catalog = self.catalog()?;
        let verdicts: Option<Vec<RelevanceVerdict>> = if self.config.relevance_check {
            Some(self.read_json(&self.workspace.relevance(), "describe")?)
        } else {
            None
        };
        let outcome = filter_catalog(&catalog, verdicts.as_deref())?;
        let report = FilterReport {
            relevance_check: self.config.relevance_check,
            kept: outcome.catalog.interfaces.iter().map(|i| i.id()).collect(),
            excluded: outcome.excluded,
        };
        let mut text = serde_json::to_string_pretty(&report).expect("serializes");
        text.push('\n');
        write_atomic(&self.workspace.filter(), text.as_bytes())?;
        Ok(report)
    }

    /// Embeds the descriptions of the kept interfaces.
    pub fn index(&self) -> Result<VectorIndex, PipelineError> {
        let catalog = self.filtered_catalog()?;
        let all: Vec<InterfaceDescription> = self.read_json(&self.workspace.descriptions(), "describe")?;
        let corpus = descriptions_for(&catalog, &all);
        let mut index = VectorIndex::new(self.config.provider.embed_model.clone());
        build_corpus(&corpus, &self.gateway, &mut index)?;
        index.save(&self.workspace.index())?;
        Ok(index)
    }

    pub fn retrieve(&self) -> Result<RetrievalResult, PipelineError> {
        let cap = self.capability()?;
        let catalog = self.filtered_catalog()?;
        let path = self.workspace.index();
        if !path.exists() {
            return Err(PipelineError::MissingArtifact { path, stage: "index" });
        }
        let index = VectorIndex::load(&path, Some(&self.config.provider.embed_model))?;
        let result = retrieve_for_capability(&cap, &catalog, &index, &self.gateway, self.config.retrieval_k)?;
        write_atomic(&self.workspace.retrieval(cap.local_name()), result.to_json().as_bytes())?;
        Ok(result)
    }

    fn load_retrieval(&self, cap: &CapabilityModel) -> Result<RetrievalResult, PipelineError> {
        let path = self.workspace.retrieval(cap.local_name());
        let text = self.read(&path, "retrieve")?;
        RetrievalResult::from_json(&text).map_err(|e| PipelineError::Artifact { path, message: e.to_string() })
    }

    /// Assembles the prompt, requests the implementation and stores both.
    pub fn generate(&self) -> Result<GeneratedCode, PipelineError> {
        let cap = self.capability()?;
        let spec = self.skill_spec()?;
        let retrieval = self.load_retrieval(&cap)?;
        let language = self.language(&spec)?;
        let few_shots = load_few_shots(
            &self.config.few_shot_dir,
            self.config.few_shots.as_deref(),
            &self.config.supported_interface_types,
        )?;
        let framework_doc = match &language.framework_doc {
            Some(p) => Some(fs::read_to_string(p).map_err(io_err(p))?),
            None => None,
        };
        let prompt = build_prompt(&cap, &spec, &retrieval, &few_shots, framework_doc.as_deref())?;
        write_atomic(&self.workspace.prompt(&spec.skill_name), prompt.rendered_text.as_bytes())?;
        let generated = generate_skill(&prompt, &self.gateway)?;
        for w in &generated.warnings {
            tracing::warn!("{w}");
        }
        write_atomic(
            &self.workspace.generated(&spec.skill_name, &language.file_extension),
            generated.code.as_bytes(),
        )?;
        Ok(generated)
    }

    pub fn verify(&self) -> Result<VerificationReport, PipelineError> {
        let cap = self.capability()?;
        let spec = self.skill_spec()?;
        let retrieval = self.load_retrieval(&cap)?;
        let catalog = self.catalog()?;
        let language = self.language(&spec)?;
        let code = self.read(&self.workspace.generated(&spec.skill_name, &language.file_extension), "generate")?;
        let report = verify(
            &code,
            &cap,
            &spec,
            &retrieval,
            &catalog,
            &self.config.annotation_profile,
            language.checker().as_ref(),
            self.config.allow_unchecked,
        )?;
        write_atomic(&self.workspace.report(&spec.skill_name), report.to_json().as_bytes())?;
        Ok(report)
    }

    /// All stages in order. The first failing stage aborts the run and
    /// leaves a `.failed` marker; a run record is written either way.
    pub fn run(&self, capability: &Path, spec: &Path, catalog: &Path) -> Result<RunOutcome, PipelineError> {
        let started = Utc::now();
        let run_id = format!("run-{}", started.format("%Y%m%dT%H%M%S%3fZ"));
        let mut record = PipelineRunRecord {
            run_id: run_id.clone(),
            started_at: timestamp(started),
            finished_at: String::new(),
            mode: self.config.mode.to_string(),
            config_digest: self.config.digest(),
            input_digests: Vec::new(),
            stages: Vec::new(),
            overall: None,
            error: None,
        };
        for (name, path) in [("capability", capability), ("skill_spec", spec), ("catalog", catalog)] {
            if let Ok(bytes) = fs::read(path) {
                record.input_digests.push((name.to_string(), sha256_hex(&bytes)));
            }
        }

        let result = self.run_stages(capability, spec, catalog, &mut record);
        record.finished_at = timestamp(Utc::now());
        let failed = self.workspace.failed_marker();
        let record_path = self.workspace.runs().join(format!("{run_id}.json"));
        match result {
            Ok((report, retrieval, generated)) => {
                record.overall = Some(report.overall);
                self.write_record(&record, &record_path)?;
                if failed.exists() {
                    fs::remove_file(&failed).map_err(io_err(&failed))?;
                }
                Ok(RunOutcome { report, retrieval, generated, record, record_path })
            }
            Err((stage, e)) => {
                record.error = Some(format!("{stage}: {e}"));
                let _ = self.write_record(&record, &record_path);
                let _ = write_atomic(&failed, format!("stage: {stage}\nerror: {e}\nrun: {run_id}\n").as_bytes());
                Err(e)
            }
        }
    }

    fn write_record(&self, record: &PipelineRunRecord, path: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(record).expect("serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    #[allow(clippy::type_complexity)]
    fn run_stages(
        &self,
        capability: &Path,
        spec: &Path,
        catalog: &Path,
        record: &mut PipelineRunRecord,
    ) -> Result<(VerificationReport, RetrievalResult, GeneratedCode), (&'static str, PipelineError)> {
        let ws = &self.workspace;
        let mut stage = |name: &'static str, artifacts: Vec<PathBuf>, f: &mut dyn FnMut() -> Result<(), PipelineError>| {
            let start = Utc::now();
            tracing::info!(stage = name, "starting");
            f().map_err(|e| (name, e))?;
            record.stages.push(StageRecord {
                stage: name.to_string(),
                started_at: timestamp(start),
                finished_at: timestamp(Utc::now()),
                artifacts: artifacts.iter().filter(|p| p.exists()).map(|p| ws.relative(p)).collect(),
            });
            Ok::<(), (&'static str, PipelineError)>(())
        };

        let mut summary = None;
        stage(
            "ingest",
            vec![ws.capability_input(), ws.spec_input(), ws.apidoc()],
            &mut || {
                summary = Some(self.ingest(capability, spec, catalog)?);
                Ok(())
            },
        )?;
        let summary = summary.expect("ingest ran");
        let mut describe_artifacts = vec![ws.descriptions()];
        if self.config.relevance_check {
            describe_artifacts.push(ws.relevance());
        }
        stage("describe", describe_artifacts, &mut || self.describe().map(|_| ()))?;
        stage("filter", vec![ws.filter()], &mut || self.filter().map(|_| ()))?;
        stage("index", vec![ws.index()], &mut || self.index().map(|_| ()))?;

        let mut retrieval = None;
        let cap_local = crate::capability::local_name(&summary.capability_iri).to_string();
        stage("retrieve", vec![ws.retrieval(&cap_local)], &mut || {
            retrieval = Some(self.retrieve()?);
            Ok(())
        })?;

        let ext = self
            .config
            .languages
            .values()
            .map(|l| l.file_extension.clone())
            .collect::<Vec<_>>();
        let skill = summary.skill_name.clone();
        let mut generated = None;
        let mut gen_artifacts = vec![ws.prompt(&skill)];
        gen_artifacts.extend(ext.iter().map(|e| ws.generated(&skill, e)));
        stage("generate", gen_artifacts, &mut || {
            generated = Some(self.generate()?);
            Ok(())
        })?;

        let mut report = None;
        stage("verify", vec![ws.report(&skill)], &mut || {
            report = Some(self.verify()?);
            Ok(())
        })?;
        Ok((
            report.expect("verify ran"),
            retrieval.expect("retrieve ran"),
            generated.expect("generate ran"),
        ))
    }
}
