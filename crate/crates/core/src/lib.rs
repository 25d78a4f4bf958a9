//! Capability-to-skill generation: ingests a capability ontology and a
//! resource interface catalog, retrieves the relevant interfaces and has a
//! language model write an annotated skill implementation, then checks it.

pub mod apidoc;
pub mod capability;
pub mod config;
pub mod enrichment;
pub mod gateway;
pub mod index;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod turtle;
pub mod verifier;

pub use apidoc::{InterfaceCatalog, InterfaceKind, ParameterField, ResourceInterface};
pub use capability::{CapabilityModel, Vocabulary};
pub use config::PipelineConfig;
pub use gateway::{Gateway, Mode, ProviderConfig};
pub use index::{Vector, VectorIndex};
pub use pipeline::{Pipeline, PipelineError};
pub use prompt::SkillSpecification;
pub use retrieval::RetrievalResult;
pub use verifier::{Overall, VerificationReport};
