//! placeholder
pub struct PipelineConfig;
pub struct RunArtifacts;
pub struct RunReport;
