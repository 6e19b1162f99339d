use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use critedit::backend::{Backend, BackendConfig, HttpBackend, MockReply, RecordingBackend, ScriptedBackend};
use critedit::engine::LoopConfig;
use critedit::eval::ScorerClient;
use critedit::prompt::{CriticDemos, CriticMode, EditorStrategy, PromptConfig};
use critedit::BucketScheme;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Where model replies come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// An OpenAI-compatible chat-completions endpoint.
    Http(BackendConfig),
    /// Replies in call order, inline or from a JSON list file.
    Scripted {
        #[serde(default)]
        replies: Vec<MockReply>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<PathBuf>,
    },
    /// Replies keyed by request fingerprint, from a JSON object file such
    /// as the `recorded_replies.json` written by an HTTP run.
    Replay { file: PathBuf },
}

/// An external scoring service and the metrics to request from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub endpoint: String,
    pub metrics: Vec<String>,
    #[serde(default = "default_scorer_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_parallelism")]
    pub max_in_flight: usize,
}

fn default_scorer_timeout() -> f64 {
    300.0
}

fn default_parallelism() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    1024
}

/// Everything a run needs. Stored verbatim in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub critic: BackendSpec,
    /// Defaults to the critic backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editor: Option<BackendSpec>,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
    /// Normalized JSONL corpus written by `ingest`.
    pub corpus: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Keep a seeded random subset of this many pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores_files: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerSpec>,
    #[serde(default)]
    pub bucket_scheme: BucketScheme,
    /// Critic demonstrations file; the built-in demos when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_budget: Option<usize>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub strategy: Option<EditorStrategy>,
    pub critic_mode: Option<CriticMode>,
    pub max_rounds: Option<usize>,
    pub parallelism: Option<usize>,
    pub out: Option<PathBuf>,
    pub scores_files: Vec<PathBuf>,
    pub subsample: Option<usize>,
    pub seed: Option<u64>,
}

/// Rejects any key that looks like an inline credential.
fn reject_inline_secrets(value: &Value, path: &str) -> Result<(), CliError> {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = k.to_ascii_lowercase();
                let is_secret = ["api_key", "apikey", "token", "secret", "password"]
                    .iter()
                    .any(|s| key == *s || key.ends_with(&format!("_{s}")));
                if is_secret {
                    return Err(CliError::Config(format!(
                        "{path}.{k}: credentials may not appear in config files; \
                         name an environment variable with api_key_env_var_name"
                    )));
                }
                reject_inline_secrets(v, &format!("{path}.{k}"))?;
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                reject_inline_secrets(v, &format!("{path}[{i}]"))?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let raw: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        reject_inline_secrets(&raw, "$")?;
        let mut config: RunConfig =
            serde_json::from_value(raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.corpus);
        resolve(base, &mut config.out);
        for p in &mut config.scores_files {
            resolve(base, p);
        }
        if let Some(p) = &mut config.demos {
            resolve(base, p);
        }
        for spec in [Some(&mut config.critic), config.editor.as_mut()].into_iter().flatten() {
            match spec {
                BackendSpec::Scripted { file: Some(p), .. } | BackendSpec::Replay { file: p } => resolve(base, p),
                _ => {}
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.strategy {
            self.loop_config.strategy = s;
        }
        if let Some(m) = o.critic_mode {
            self.loop_config.critic_mode = m;
        }
        if let Some(r) = o.max_rounds {
            self.loop_config.max_rounds = r;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.scores_files.extend(o.scores_files.iter().cloned());
        if o.subsample.is_some() {
            self.subsample = o.subsample;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
    }

    /// Checks everything that can be checked before any network call.
    pub fn validate(&self) -> Result<(), CliError> {
        self.loop_config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        if self.subsample == Some(0) {
            return Err(CliError::Config("subsample must be at least 1".into()));
        }
        if self.max_tokens == 0 || self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(CliError::Config("max_tokens must be positive and temperature non-negative".into()));
        }
        for spec in [Some(&self.critic), self.editor.as_ref()].into_iter().flatten() {
            if let BackendSpec::Http(c) = spec {
                c.validate().map_err(CliError::Config)?;
            }
        }
        if let Some(s) = &self.scorer {
            if s.endpoint.trim().is_empty() || s.metrics.is_empty() {
                return Err(CliError::Config("scorer needs an endpoint and at least one metric".into()));
            }
        }
        Ok(())
    }

    pub fn prompt_config(&self) -> Result<PromptConfig, CliError> {
        let demos = match &self.demos {
            Some(p) => CriticDemos::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => CriticDemos::builtin(),
        };
        Ok(PromptConfig {
            critic_mode: self.loop_config.critic_mode,
            demos,
            sentence_budget: self.sentence_budget,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        })
    }

    pub fn scorer_client(&self) -> Option<(ScorerClient, &ScorerSpec)> {
        self.scorer.as_ref().map(|s| {
            let client = ScorerClient::new(&s.endpoint, Duration::from_secs_f64(s.timeout_secs), s.max_in_flight);
            (client, s)
        })
    }
}

/// A constructed backend plus, for live backends, the recorder whose
/// replies should be saved for replay.
pub struct BuiltBackend {
    pub backend: Arc<dyn Backend>,
    pub recorder: Option<Arc<RecordingBackend<HttpBackend>>>,
}

pub fn build_backend(spec: &BackendSpec) -> Result<BuiltBackend, CliError> {
    let read =
        |p: &Path| fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())));
    match spec {
        BackendSpec::Http(config) => {
            let http = HttpBackend::new(config.clone()).map_err(|e| CliError::Config(e.to_string()))?;
            let recorder = Arc::new(RecordingBackend::new(http));
            Ok(BuiltBackend { backend: recorder.clone(), recorder: Some(recorder) })
        }
        BackendSpec::Scripted { replies, file } => {
            let mut all = replies.clone();
            if let Some(p) = file {
                let more: Vec<MockReply> =
                    serde_json::from_str(&read(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                all.extend(more);
            }
            Ok(BuiltBackend { backend: Arc::new(ScriptedBackend::list(all)), recorder: None })
        }
        BackendSpec::Replay { file } => {
            let map: HashMap<String, MockReply> =
                serde_json::from_str(&read(file)?).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
            Ok(BuiltBackend { backend: Arc::new(ScriptedBackend::keyed(map)), recorder: None })
        }
    }
}
