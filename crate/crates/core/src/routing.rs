//! Question-ID driven routing to a model, a country knowledge base and a
//! prompt language.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::types::{Locale, LocaleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    RagBase,
    RagWeb,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "rag-base" | "base" => Ok(Mode::RagBase),
            "rag-web" | "web" => Ok(Mode::RagWeb),
            other => Err(format!("unknown mode {other:?} (expected rag-base or rag-web)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub mode: Mode,
    pub default_model: String,
    pub chinese_model: String,
    pub chinese_variants: BTreeSet<String>,
    pub base_model: String,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            mode: Mode::RagBase,
            default_model: "mistral:7b".to_string(),
            chinese_model: "deepseek-llm:67b".to_string(),
            chinese_variants: ["zh-CN", "zh-TW", "zh-SG"].iter().map(|s| s.to_string()).collect(),
            base_model: "gemma3:4b".to_string(),
        }
    }
}

impl RoutingConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RouteDecision {
    pub model_id: String,
    pub kb_id: String,
    pub prompt_language: Locale,
}

fn locale_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[a-z]{2}-[A-Z]{2}").expect("valid regex"))
}

/// First `ll-RR` token in the id, scanning left to right.
pub fn parse_locale(question_id: &str) -> Result<Locale, LocaleError> {
    let m = locale_token()
        .find(question_id)
        .ok_or_else(|| LocaleError::NoToken(question_id.to_string()))?;
    m.as_str().parse()
}

pub fn route(locale: &Locale, config: &RoutingConfig) -> RouteDecision {
    let model_id = match config.mode {
        Mode::RagBase => config.base_model.clone(),
        Mode::RagWeb if config.chinese_variants.contains(&locale.to_string()) => {
            config.chinese_model.clone()
        }
        Mode::RagWeb => config.default_model.clone(),
    };
    RouteDecision {
        model_id,
        kb_id: locale.region().to_string(),
        prompt_language: *locale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_embedded_tokens() {
        assert_eq!(parse_locale("es-MX-0001").unwrap().to_string(), "es-MX");
        assert_eq!(parse_locale("q_zh-SG_17").unwrap().to_string(), "zh-SG");
        assert_eq!(
            parse_locale("question-17"),
            Err(LocaleError::NoToken("question-17".into()))
        );
    }

    #[test]
    fn leftmost_token_wins() {
        assert_eq!(parse_locale("en-GB_vs_zh-CN").unwrap().to_string(), "en-GB");
        // "xen-GBx" still contains a token
        assert_eq!(parse_locale("xen-GBx").unwrap().to_string(), "en-GB");
    }

    #[test]
    fn default_routes() {
        let web = RoutingConfig::with_mode(Mode::RagWeb);
        let zh = route(&"zh-CN".parse().unwrap(), &web);
        assert_eq!(zh.model_id, "deepseek-llm:67b");
        assert_eq!(zh.kb_id, "CN");
        let es = route(&"es-MX".parse().unwrap(), &web);
        assert_eq!(es.model_id, "mistral:7b");
        assert_eq!(es.kb_id, "MX");
        let base = route(&"en-GB".parse().unwrap(), &RoutingConfig::default());
        assert_eq!(base.model_id, "gemma3:4b");
        assert_eq!(base.kb_id, "GB");
    }

    #[test]
    fn unlisted_chinese_variant_uses_default_model() {
        let web = RoutingConfig::with_mode(Mode::RagWeb);
        let r = route(&"zh-MY".parse().unwrap(), &web);
        assert_eq!(r.model_id, "mistral:7b");
    }

    proptest! {
        #[test]
        fn route_is_pure(l in "[a-z]{2}", r in "[A-Z]{2}", web in any::<bool>()) {
            let loc = Locale::new(&l, &r).unwrap();
            let cfg = RoutingConfig::with_mode(if web { Mode::RagWeb } else { Mode::RagBase });
            let a = route(&loc, &cfg);
            prop_assert_eq!(&a, &route(&loc, &cfg));
            prop_assert_eq!(a.prompt_language, loc);
            prop_assert_eq!(a.kb_id, r);
        }
    }
}
