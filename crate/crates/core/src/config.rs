//! Pipeline configuration file (JSON).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capability::Vocabulary;
use crate::gateway::{Mode, ProviderConfig};
use crate::retrieval::DEFAULT_K;
use crate::verifier::{AnnotationProfile, SyntaxChecker};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageConfig {
    /// Skill-framework explanation included in the prompt, if any.
    pub framework_doc: Option<PathBuf>,
    pub file_extension: String,
    /// Syntax checker command; `{file}` is replaced by the code path.
    pub syntax_checker: Option<Vec<String>>,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self { framework_doc: None, file_extension: "txt".into(), syntax_checker: None }
    }
}

impl LanguageConfig {
    pub fn checker(&self) -> Option<SyntaxChecker> {
        self.syntax_checker.as_ref().map(|command| SyntaxChecker {
            command: command.clone(),
            file_extension: self.file_extension.clone(),
        })
    }
}

fn default_languages() -> BTreeMap<String, LanguageConfig> {
    let python = LanguageConfig {
        framework_doc: None,
        file_extension: "py".into(),
        syntax_checker: Some(vec![
            "python3".into(),
            "-c".into(),
            "import ast, sys; ast.parse(open(sys.argv[1], encoding='utf-8').read(), sys.argv[1])".into(),
            "{file}".into(),
        ]),
    };
    BTreeMap::from([("Python".to_string(), python)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    pub mode: Mode,
    pub workspace: Option<PathBuf>,
    /// Replay cache directory; defaults to `<workspace>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub retrieval_k: usize,
    pub relevance_check: bool,
    pub vocabulary: Vocabulary,
    pub annotation_profile: AnnotationProfile,
    pub languages: BTreeMap<String, LanguageConfig>,
    pub few_shot_dir: PathBuf,
    /// Few-shot example names; all subdirectories of `few_shot_dir` if unset.
    pub few_shots: Option<Vec<String>>,
    pub supported_interface_types: Vec<String>,
    pub allow_unchecked: bool,
    /// Capability to use when the ontology holds several.
    pub capability_iri: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            provider: ProviderConfig::default(),
            mode: Mode::Replay,
            workspace: None,
            cache_dir: None,
            retrieval_k: DEFAULT_K,
            relevance_check: true,
            vocabulary: Vocabulary::default(),
            annotation_profile: AnnotationProfile::default(),
            languages: default_languages(),
            few_shot_dir: PathBuf::from("fewshot"),
            few_shots: None,
            supported_interface_types: vec!["REST".into()],
            allow_unchecked: false,
            capability_iri: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(w) = self.workspace.as_mut() {
            fix(w);
        }
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
        fix(&mut self.few_shot_dir);
        for lang in self.languages.values_mut() {
            if let Some(doc) = lang.framework_doc.as_mut() {
                fix(doc);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.retrieval_k < 1 {
            return Err(ConfigError::Invalid("retrieval_k must be at least 1".into()));
        }
        if self.provider.max_in_flight < 1 {
            return Err(ConfigError::Invalid("provider.max_in_flight must be at least 1".into()));
        }
        if self.supported_interface_types.is_empty() {
            return Err(ConfigError::Invalid("supported_interface_types must not be empty".into()));
        }
        self.annotation_profile.validate().map_err(ConfigError::Invalid)
    }

    /// Case-insensitive lookup of a target language.
    pub fn language(&self, name: &str) -> Option<&LanguageConfig> {
        self.languages
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(serde_json::to_string(&value).expect("serializes").as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_evaluation_setup() {
        let c = PipelineConfig::default();
        assert_eq!(c.retrieval_k, 4);
        assert_eq!(c.provider.temperature, 0.0);
        assert_eq!(c.provider.top_p, 1.0);
        assert_eq!(c.provider.max_attempts, 3);
        assert_eq!(c.provider.embed_model, "text-embedding-3-large");
        assert!(c.language("python").is_some());
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            r#"{"retrieval_k": 2, "few_shot_dir": "shots", "languages": {"Python": {"framework_doc": "fw.md", "file_extension": "py"}}}"#,
        )
        .unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.retrieval_k, 2);
        assert_eq!(c.few_shot_dir, dir.path().join("shots"));
        assert_eq!(c.language("PYTHON").unwrap().framework_doc.as_deref(), Some(dir.path().join("fw.md").as_path()));
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"retrieval_k": 0}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(ConfigError::Invalid(_))));
        fs::write(&path, r#"{"retreival_k": 3}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn digest_is_stable() {
        let a = PipelineConfig::default();
        assert_eq!(a.digest(), PipelineConfig::default().digest());
        let mut b = a.clone();
        b.retrieval_k = 5;
        assert_ne!(a.digest(), b.digest());
    }
}
