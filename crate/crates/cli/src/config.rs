//! Engine configuration: file, environment and flag layering.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use focusqa_core::backends::mock::Scenario;
use focusqa_core::backends::openai::{EndpointConfig, OpenAiChat, OpenAiEmbeddings};
use focusqa_core::backends::rules::RuleExtractor;
use focusqa_core::backends::{HashEmbedder, ModelRouter, Role};
use focusqa_core::evaluation::{ModelPrice, PriceTable};
use focusqa_core::PipelineConfig;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_STORE: &str = ".focusqa/store";

/// One OpenAI-compatible endpoint bound to a model role.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointBinding {
    pub base_url: Option<String>,
    pub model_id: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    /// Request token log-probabilities (expensive role only).
    pub logprobs: Option<bool>,
}

/// The on-disk configuration file (TOML, or JSON when the extension is `.json`).
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub store: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    /// In-flight calls per role.
    pub concurrency: Option<usize>,
    pub pipeline: PipelineConfig,
    pub expensive: EndpointBinding,
    pub filter: EndpointBinding,
    pub embedder: EndpointBinding,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: EngineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        };
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.store, &mut config.prices, &mut config.scenario]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

/// Values that came from flags or the environment; these win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub expensive: (Option<String>, Option<String>),
    pub filter: (Option<String>, Option<String>),
    pub embedder: (Option<String>, Option<String>),
}

/// Fully layered settings for one command.
#[derive(Debug, Clone)]
pub struct Settings {
    pub store: PathBuf,
    pub prices: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub pipeline: PipelineConfig,
    pub expensive: EndpointBinding,
    pub filter: EndpointBinding,
    pub embedder: EndpointBinding,
}

fn layer(binding: &mut EndpointBinding, over: &(Option<String>, Option<String>)) {
    if let Some(url) = &over.0 {
        binding.base_url = Some(url.clone());
    }
    if let Some(model) = &over.1 {
        binding.model_id = Some(model.clone());
    }
}

impl Settings {
    pub fn resolve(file: EngineConfig, over: Overrides) -> Self {
        let mut s = Settings {
            store: over
                .store
                .or(file.store)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
            prices: over.prices.or(file.prices),
            scenario: over.scenario.or(file.scenario),
            concurrency: file.concurrency,
            pipeline: file.pipeline,
            expensive: file.expensive,
            filter: file.filter,
            embedder: file.embedder,
        };
        layer(&mut s.expensive, &over.expensive);
        layer(&mut s.filter, &over.filter);
        layer(&mut s.embedder, &over.embedder);
        s
    }
}

/// Model roles plus the prices that go with them.
pub struct Backends {
    pub router: ModelRouter,
    pub prices: PriceTable,
}

fn endpoint(role: &str, binding: &EndpointBinding) -> Result<EndpointConfig, CliError> {
    let (Some(url), Some(model)) = (&binding.base_url, &binding.model_id) else {
        return Err(CliError::Usage(format!(
            "the {role} role is not bound: set base_url and model_id in the config file, \
             FOCUSQA_{upper}_BASE_URL / FOCUSQA_{upper}_MODEL, or pass --scenario",
            upper = role.to_uppercase()
        )));
    };
    let key_var = binding
        .api_key_env
        .clone()
        .unwrap_or_else(|| format!("FOCUSQA_{}_API_KEY", role.to_uppercase()));
    let mut config = EndpointConfig::new(url, model).with_api_key(std::env::var(&key_var).ok());
    if let Some(secs) = binding.timeout_secs {
        config.timeout = Duration::from_secs(secs);
    }
    Ok(config)
}

impl Settings {
    /// Builds model roles from the scenario file when one is set, otherwise
    /// from the bound HTTP endpoints. `--prices` entries override defaults.
    pub fn backends(&self) -> Result<Backends, CliError> {
        let (mut router, mut prices) = match &self.scenario {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let scenario = Scenario::from_json(&text).map_err(|e| {
                    CliError::Usage(format!("{}: invalid scenario: {e}", path.display()))
                })?;
                let built = scenario.build().map_err(|e| {
                    CliError::Usage(format!("{}: invalid scenario regex: {e}", path.display()))
                })?;
                (built.router(), scenario.price_table())
            }
            None => {
                let expensive = OpenAiChat::new(endpoint("expensive", &self.expensive)?)?
                    .with_logprobs(self.expensive.logprobs.unwrap_or(true));
                let filter = OpenAiChat::new(endpoint("filter", &self.filter)?)?;
                let embedder = OpenAiEmbeddings::new(endpoint("embedder", &self.embedder)?)?;
                let router =
                    ModelRouter::new(Arc::new(expensive), Arc::new(filter), Arc::new(embedder));
                (router, PriceTable::default())
            }
        };
        if let Some(n) = self.concurrency {
            router = router
                .with_concurrency(Role::Expensive, n)
                .with_concurrency(Role::Filter, n)
                .with_embedding_concurrency(n);
        }
        if let Some(path) = &self.prices {
            prices.extend(
                &PriceTable::load(path)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            );
        }
        Ok(Backends { router, prices })
    }

    /// The offline cue-phrase extractor in the expensive role.
    pub fn rules_backends(&self) -> Backends {
        let rules = Arc::new(RuleExtractor::default());
        let router = ModelRouter::new(rules.clone(), rules, Arc::new(HashEmbedder::default()));
        let mut prices = PriceTable::default();
        prices.insert("rules-extractor", ModelPrice::new(0.0, 0.0));
        Backends { router, prices }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file() {
        let file: EngineConfig = toml::from_str(
            r#"
            store = "from-file"
            [pipeline]
            top_k = 3
            [expensive]
            base_url = "http://file/v1"
            model_id = "file-model"
            api_key_env = "MY_KEY"
            "#,
        )
        .unwrap();
        let over = Overrides {
            store: Some("from-flag".into()),
            expensive: (None, Some("flag-model".into())),
            ..Overrides::default()
        };
        let s = Settings::resolve(file, over);
        assert_eq!(s.store, PathBuf::from("from-flag"));
        assert_eq!(s.pipeline.top_k, 3);
        assert_eq!(s.pipeline.chunk_budget, 4000);
        assert_eq!(s.expensive.base_url.as_deref(), Some("http://file/v1"));
        assert_eq!(s.expensive.model_id.as_deref(), Some("flag-model"));
        assert_eq!(s.expensive.api_key_env.as_deref(), Some("MY_KEY"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<EngineConfig>("stor = 'x'").is_err());
    }

    #[test]
    fn unbound_role_is_a_usage_error() {
        let s = Settings::resolve(EngineConfig::default(), Overrides::default());
        assert!(matches!(s.backends(), Err(CliError::Usage(_))));
    }
}
